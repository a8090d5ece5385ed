#include "zigprune/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "zigprune/graph_io.hpp"

namespace zigprune {

Dataset Dataset::gather(const std::vector<std::int64_t> &idx) const {
  Dataset out;
  const auto per = x.shape.sample_size();
  out.x = Tensor(x.shape.with_batch(std::int64_t(idx.size())));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(x.data.begin() + idx[r] * per, per, out.x.data.begin() + std::int64_t(r) * per);
    if (!labels.empty()) out.labels.push_back(labels[std::size_t(idx[r])]);
  }
  return out;
}

namespace {

Dataset render_blobs(const BlobSpec &spec, std::int64_t n,
                     const std::vector<std::vector<double>> &means, Rng &rng) {
  Dataset d;
  d.x = Tensor(TensorShape{n, spec.channels, spec.height, spec.width});
  d.labels.resize(std::size_t(n));
  for (std::int64_t i = 0; i < n; ++i) d.labels[std::size_t(i)] = int(i % spec.classes);
  std::shuffle(d.labels.begin(), d.labels.end(), rng);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const auto plane = spec.height * spec.width;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto &mu = means[std::size_t(d.labels[std::size_t(i)])];
    for (std::int64_t c = 0; c < spec.channels; ++c) {
      double *p = d.x.data.data() + (i * spec.channels + c) * plane;
      for (std::int64_t q = 0; q < plane; ++q) p[q] = mu[std::size_t(c)] + noise(rng);
    }
  }
  return d;
}

} // namespace

SplitDataset make_blob_dataset(const BlobSpec &spec, Rng &rng) {
  if (spec.classes < 2 || spec.train <= 0 || spec.test < 0)
    throw Error(ErrorCode::InvalidConfig, "blob dataset needs >= 2 classes and samples");
  // Class means: unit Gaussian directions in channel space, scaled.
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> means(std::size_t(spec.classes),
                                         std::vector<double>(std::size_t(spec.channels)));
  for (auto &m : means) {
    double norm = 0.0;
    for (auto &v : m) {
      v = unit(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto &v : m) v *= spec.separation / std::max(norm, 1e-12);
  }
  SplitDataset s;
  s.num_classes = spec.classes;
  s.train = render_blobs(spec, spec.train, means, rng);
  s.test = render_blobs(spec, spec.test, means, rng);
  return s;
}

namespace {

Dataset read_csv_split(const std::filesystem::path &file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + file.string());
  std::string line;
  std::vector<int> labels;
  std::vector<double> pixels;
  std::int64_t width = -1;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (!line.empty() && !std::isdigit(static_cast<unsigned char>(line[0]))) continue; // header
    }
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    labels.push_back(std::stoi(cell));
    std::int64_t count = 0;
    while (std::getline(ss, cell, ',')) {
      pixels.push_back(std::stod(cell) / 255.0);
      ++count;
    }
    if (width < 0) width = count;
    if (count != width) throw Error(ErrorCode::Io, file.string() + ": ragged row");
  }
  const auto side = std::int64_t(std::llround(std::sqrt(double(std::max<std::int64_t>(width, 0)))));
  if (labels.empty() || side * side != width)
    throw Error(ErrorCode::Io, file.string() + ": rows are not square images");
  Dataset d;
  d.x = Tensor(TensorShape{std::int64_t(labels.size()), 1, side, side}, std::move(pixels));
  d.labels = std::move(labels);
  return d;
}

} // namespace

SplitDataset load_image_csv(const std::filesystem::path &dir) {
  SplitDataset s;
  s.train = read_csv_split(dir / "train.csv");
  s.test = read_csv_split(dir / "test.csv");
  int top = 0;
  for (int l : s.train.labels) top = std::max(top, l);
  for (int l : s.test.labels) top = std::max(top, l);
  s.num_classes = top + 1;
  return s;
}

void save_tensor(const Tensor &t, const std::filesystem::path &stem,
                 const std::vector<int> &labels) {
  static_assert(std::endian::native == std::endian::little, "binary datasets are little-endian");
  json header{{"format", "zigprune-tensor"}, {"dtype", "f64le"}, {"shape", t.shape.dims}};
  if (!labels.empty()) header["labels"] = labels;
  write_json_file(header, std::filesystem::path(stem).concat(".json"));
  const auto bin = std::filesystem::path(stem).concat(".bin");
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + bin.string());
  out.write(reinterpret_cast<const char *>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(double)));
}

Tensor load_tensor(const std::filesystem::path &stem, std::vector<int> *labels) {
  const auto header = read_json_file(std::filesystem::path(stem).concat(".json"));
  if (header.value("format", "") != "zigprune-tensor" || header.value("dtype", "") != "f64le")
    throw Error(ErrorCode::Io, stem.string() + ": not a zigprune tensor header");
  Tensor t(TensorShape(header.at("shape").get<std::vector<std::int64_t>>()));
  const auto bin = std::filesystem::path(stem).concat(".bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + bin.string());
  in.read(reinterpret_cast<char *>(t.data.data()), std::streamsize(t.data.size() * sizeof(double)));
  if (in.gcount() != std::streamsize(t.data.size() * sizeof(double)))
    throw Error(ErrorCode::Io, bin.string() + ": truncated");
  if (labels) *labels = header.value("labels", std::vector<int>{});
  return t;
}

} // namespace zigprune
