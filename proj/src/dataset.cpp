#include "prcl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "prcl/rng.hpp"

namespace prcl {

void Dataset::validate() const {
  if (inputs.size() != labels.size()) throw std::invalid_argument("dataset: inputs/labels size mismatch");
  if (inputs.empty()) throw std::invalid_argument("dataset: empty");
  for (const Tensor& t : inputs) {
    if (!same_shape(t.shape, input_shape)) {
      throw std::invalid_argument("dataset: sample shape " + shape_str(t.shape) + " != declared " +
                                  shape_str(input_shape));
    }
  }
}

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "two_moons") return DatasetKind::kTwoMoons;
  if (name == "gaussian_blobs") return DatasetKind::kGaussianBlobs;
  if (name == "digits8x8") return DatasetKind::kDigits8x8;
  throw std::invalid_argument("unknown dataset kind '" + name +
                              "' (options: two_moons, gaussian_blobs, digits8x8)");
}

std::string dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kTwoMoons: return "two_moons";
    case DatasetKind::kGaussianBlobs: return "gaussian_blobs";
    case DatasetKind::kDigits8x8: return "digits8x8";
  }
  return "?";
}

namespace {

constexpr double kPi = 3.14159265358979323846;

Dataset make_two_moons(int n, uint64_t seed) {
  const double noise = 0.12;
  Dataset ds;
  ds.input_shape = {2};
  ds.classes = 2;
  for (int i = 0; i < n; ++i) {
    RngStream s(seed, "two_moons", i);
    int cls = i % 2;
    double t = s.next_uniform(0.0, kPi);
    double x, y;
    if (cls == 0) {
      x = std::cos(t);
      y = std::sin(t);
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
    }
    x += noise * s.next_gaussian();
    y += noise * s.next_gaussian();
    ds.inputs.push_back(Tensor({2}, {x, y}));
    ds.labels.push_back(Tensor::scalar(static_cast<double>(cls)));
  }
  return ds;
}

Dataset make_gaussian_blobs(int n, uint64_t seed) {
  const int classes = 10;
  const double radius = 5.0, spread = 0.9;
  Dataset ds;
  ds.input_shape = {2};
  ds.classes = classes;
  for (int i = 0; i < n; ++i) {
    RngStream s(seed, "gaussian_blobs", i);
    int cls = i % classes;
    double angle = 2.0 * kPi * cls / classes;
    double x = radius * std::cos(angle) + spread * s.next_gaussian();
    double y = radius * std::sin(angle) + spread * s.next_gaussian();
    ds.inputs.push_back(Tensor({2}, {x, y}));
    ds.labels.push_back(Tensor::scalar(static_cast<double>(cls)));
  }
  return ds;
}

// 8x8 glyphs for the ten digits; '#' = 1, '.' = 0.
const char* const kGlyphs[10][8] = {
    {"..####..", ".#....#.", ".#...##.", ".#..#.#.", ".#.#..#.", ".##...#.", ".#....#.", "..####.."},
    {"...##...", "..###...", "...#....", "...#....", "...#....", "...#....", "...#....", "..####.."},
    {"..####..", ".#....#.", "......#.", ".....#..", "....#...", "..##....", ".#......", ".######."},
    {"..####..", ".#....#.", "......#.", "...###..", "......#.", "......#.", ".#....#.", "..####.."},
    {"....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#..", ".....#.."},
    {".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.", "..####.."},
    {"..####..", ".#......", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.", "..####.."},
    {".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....", "...#...."},
    {"..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.", "..####.."},
    {"..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", ".....#..", "..###..."}};

Dataset make_digits8x8(int n, uint64_t seed) {
  const double noise = 0.18;
  Dataset ds;
  ds.input_shape = {1, 8, 8};
  ds.classes = 10;
  for (int i = 0; i < n; ++i) {
    RngStream s(seed, "digits8x8", i);
    int cls = i % 10;
    Tensor img({1, 8, 8});
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) {
        double base = kGlyphs[cls][r][c] == '#' ? 1.0 : 0.0;
        img.data[static_cast<size_t>(r * 8 + c)] = base + noise * s.next_gaussian();
      }
    }
    ds.inputs.push_back(std::move(img));
    ds.labels.push_back(Tensor::scalar(static_cast<double>(cls)));
  }
  return ds;
}

}  // namespace

Dataset generate_dataset(DatasetKind kind, int n, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("generate_dataset: need n >= 2");
  Dataset ds;
  switch (kind) {
    case DatasetKind::kTwoMoons: ds = make_two_moons(n, seed); break;
    case DatasetKind::kGaussianBlobs: ds = make_gaussian_blobs(n, seed); break;
    case DatasetKind::kDigits8x8: ds = make_digits8x8(n, seed); break;
  }
  ds.id = dataset_kind_name(kind) + "(n=" + std::to_string(n) + ",seed=" + std::to_string(seed) + ")";
  return ds;
}

Dataset dataset_slice(const Dataset& ds, int begin, int end) {
  if (begin < 0 || end > ds.size() || begin >= end) {
    throw std::invalid_argument("dataset_slice: bad range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") for size " + std::to_string(ds.size()));
  }
  Dataset out;
  out.id = ds.id + "[" + std::to_string(begin) + ":" + std::to_string(end) + "]";
  out.input_shape = ds.input_shape;
  out.label_dim = ds.label_dim;
  out.classes = ds.classes;
  out.inputs.assign(ds.inputs.begin() + begin, ds.inputs.begin() + end);
  out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + end);
  return out;
}

Dataset onehot_targets(const Dataset& ds, int width) {
  if (ds.label_dim != 0) throw std::invalid_argument("onehot_targets: dataset already has vector targets");
  Dataset out = ds;
  out.label_dim = width;
  for (Tensor& l : out.labels) {
    int cls = static_cast<int>(l.data[0]);
    if (cls < 0 || cls >= width) {
      throw std::invalid_argument("onehot_targets: class " + std::to_string(cls) + " does not fit width " +
                                  std::to_string(width));
    }
    Tensor t({width});
    t.data[static_cast<size_t>(cls)] = 1.0;
    l = std::move(t);
  }
  return out;
}

Batch pack_batch(const Dataset& ds, int begin, int end, const Shape& per_sample_shape) {
  if (begin < 0 || end > ds.size() || begin >= end) {
    throw std::invalid_argument("pack_batch: bad range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") for size " + std::to_string(ds.size()));
  }
  Shape sample = per_sample_shape.empty() ? ds.input_shape : per_sample_shape;
  int64_t sample_numel = shape_numel(sample);
  if (sample_numel != shape_numel(ds.input_shape)) {
    throw std::invalid_argument("pack_batch: requested shape " + shape_str(sample) +
                                " incompatible with sample shape " + shape_str(ds.input_shape));
  }
  int m = end - begin;
  Batch b;
  b.size = m;
  Shape in_shape;
  in_shape.push_back(m);
  in_shape.insert(in_shape.end(), sample.begin(), sample.end());
  b.inputs = Tensor(in_shape);
  for (int i = 0; i < m; ++i) {
    const Tensor& src = ds.inputs[static_cast<size_t>(begin + i)];
    std::copy(src.data.begin(), src.data.end(),
              b.inputs.data.begin() + static_cast<int64_t>(i) * sample_numel);
  }
  if (ds.label_dim == 0) {
    b.labels = Tensor({m});
    for (int i = 0; i < m; ++i) b.labels.data[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(begin + i)].data[0];
  } else {
    b.labels = Tensor({m, ds.label_dim});
    for (int i = 0; i < m; ++i) {
      const Tensor& src = ds.labels[static_cast<size_t>(begin + i)];
      std::copy(src.data.begin(), src.data.end(), b.labels.data.begin() + static_cast<int64_t>(i) * ds.label_dim);
    }
  }
  return b;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);
  std::vector<std::string> header = split_csv_line(line);
  int label_col = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "label") label_col = static_cast<int>(i);
  }
  if (label_col < 0) throw std::runtime_error("load_csv: no column named 'label' in " + path);
  int dim = static_cast<int>(header.size()) - 1;
  if (dim < 1) throw std::runtime_error("load_csv: no feature columns in " + path);

  Dataset ds;
  ds.input_shape = {dim};
  int max_label = 0;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("load_csv: row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(header.size()));
    }
    Tensor x({dim});
    int fi = 0;
    double label = 0.0;
    for (size_t c = 0; c < cells.size(); ++c) {
      double v;
      try {
        v = std::stod(cells[c]);
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv: row " + std::to_string(row) + " column '" + header[c] +
                                 "': not a number: '" + cells[c] + "'");
      }
      if (static_cast<int>(c) == label_col) {
        label = v;
      } else {
        x.data[static_cast<size_t>(fi++)] = v;
      }
    }
    if (label != std::floor(label) || label < 0) {
      throw std::runtime_error("load_csv: row " + std::to_string(row) + ": label must be a nonnegative integer");
    }
    max_label = std::max(max_label, static_cast<int>(label));
    ds.inputs.push_back(std::move(x));
    ds.labels.push_back(Tensor::scalar(label));
  }
  if (ds.inputs.empty()) throw std::runtime_error("load_csv: no data rows in " + path);
  ds.classes = max_label + 1;
  ds.id = "csv:" + path;
  return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
  if (ds.label_dim != 0) throw std::invalid_argument("save_csv: only class-labeled datasets supported");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  int64_t dim = shape_numel(ds.input_shape);
  out << "label";
  for (int64_t i = 0; i < dim; ++i) out << ",f" << i;
  out << "\n";
  out.precision(17);
  for (int i = 0; i < ds.size(); ++i) {
    out << static_cast<long long>(ds.labels[static_cast<size_t>(i)].data[0]);
    for (double v : ds.inputs[static_cast<size_t>(i)].data) out << "," << v;
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_csv: write failed for " + path);
}

namespace {

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("idx: truncated header in " + path);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

struct IdxData {
  Shape dims;
  std::vector<double> values;  // raw element values (bytes 0..255, floats as stored)
  bool is_byte = false;
};

IdxData read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("idx: cannot open " + path);
  uint32_t magic = read_be32(in, path);
  if ((magic & 0xffff0000u) != 0) throw std::runtime_error("idx: bad magic in " + path);
  uint32_t dtype = (magic >> 8) & 0xff;
  int ndims = static_cast<int>(magic & 0xff);
  if (ndims < 1 || ndims > 4) throw std::runtime_error("idx: unsupported rank in " + path);
  IdxData out;
  int64_t total = 1;
  for (int i = 0; i < ndims; ++i) {
    uint32_t d = read_be32(in, path);
    out.dims.push_back(static_cast<int>(d));
    total *= d;
  }
  out.values.resize(static_cast<size_t>(total));
  if (dtype == 0x08) {  // unsigned byte
    out.is_byte = true;
    std::vector<unsigned char> raw(static_cast<size_t>(total));
    in.read(reinterpret_cast<char*>(raw.data()), total);
    if (!in) throw std::runtime_error("idx: truncated payload in " + path);
    for (int64_t i = 0; i < total; ++i) out.values[static_cast<size_t>(i)] = raw[static_cast<size_t>(i)];
  } else if (dtype == 0x0d) {  // float32
    for (int64_t i = 0; i < total; ++i) {
      unsigned char b[4];
      in.read(reinterpret_cast<char*>(b), 4);
      if (!in) throw std::runtime_error("idx: truncated payload in " + path);
      uint32_t bits = (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
                      (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
      float f;
      static_assert(sizeof(f) == 4);
      std::memcpy(&f, &bits, 4);
      out.values[static_cast<size_t>(i)] = static_cast<double>(f);
    }
  } else {
    throw std::runtime_error("idx: unsupported element type in " + path);
  }
  return out;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  IdxData images = read_idx(images_path);
  IdxData labels = read_idx(labels_path);
  if (labels.dims.size() != 1) throw std::runtime_error("idx: label file must be rank 1: " + labels_path);
  if (images.dims.empty() || images.dims[0] != labels.dims[0]) {
    throw std::runtime_error("idx: image/label sample counts differ");
  }
  int n = images.dims[0];
  Dataset ds;
  if (images.dims.size() == 3) {
    ds.input_shape = {1, images.dims[1], images.dims[2]};  // single channel
  } else {
    ds.input_shape = Shape(images.dims.begin() + 1, images.dims.end());
  }
  int64_t sample_numel = shape_numel(ds.input_shape);
  double img_scale = images.is_byte ? 1.0 / 255.0 : 1.0;
  int max_label = 0;
  for (int i = 0; i < n; ++i) {
    Tensor x(ds.input_shape);
    for (int64_t j = 0; j < sample_numel; ++j) {
      x.data[static_cast<size_t>(j)] = images.values[static_cast<size_t>(i * sample_numel + j)] * img_scale;
    }
    double label = std::round(labels.values[static_cast<size_t>(i)]);
    if (label < 0) throw std::runtime_error("idx: negative label in " + labels_path);
    max_label = std::max(max_label, static_cast<int>(label));
    ds.inputs.push_back(std::move(x));
    ds.labels.push_back(Tensor::scalar(label));
  }
  ds.classes = max_label + 1;
  ds.id = "idx:" + images_path;
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  if (ds.label_dim != 0) throw std::invalid_argument("save_idx: only class-labeled datasets supported");
  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("save_idx: cannot open " + images_path);
  // float32 payload so values outside [0,1] survive the round trip
  Shape dims;
  dims.push_back(ds.size());
  for (size_t i = ds.input_shape.size() == 3 && ds.input_shape[0] == 1 ? 1 : 0; i < ds.input_shape.size(); ++i) {
    dims.push_back(ds.input_shape[i]);
  }
  write_be32(imgs, 0x0d00u | static_cast<uint32_t>(dims.size()));
  for (int d : dims) write_be32(imgs, static_cast<uint32_t>(d));
  for (const Tensor& t : ds.inputs) {
    for (double v : t.data) {
      float f = static_cast<float>(v);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_be32(imgs, bits);
    }
  }
  if (!imgs) throw std::runtime_error("save_idx: write failed for " + images_path);

  std::ofstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("save_idx: cannot open " + labels_path);
  write_be32(labs, 0x0801u);
  write_be32(labs, static_cast<uint32_t>(ds.size()));
  for (const Tensor& t : ds.labels) {
    unsigned char b = static_cast<unsigned char>(t.data[0]);
    labs.write(reinterpret_cast<char*>(&b), 1);
  }
  if (!labs) throw std::runtime_error("save_idx: write failed for " + labels_path);
}

}  // namespace prcl
