#include "dfme/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

namespace dfme {

void LabeledDataset::validate() const {
  if (inputs.rank() != 2) throw DimensionError("dataset inputs must be rank 2");
  if (inputs.rows() != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(inputs.rows()) +
                         " input rows but " + std::to_string(labels.size()) + " labels");
  }
  for (int label : labels) {
    if (label < 0 || label >= num_classes) {
      throw DomainError("dataset label " + std::to_string(label) +
                        " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

SplitDataset split_dataset(const LabeledDataset& full, double test_fraction, Rng& rng) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw ConfigError("test_fraction must be in [0, 1)");
  }
  const std::size_t n = full.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);

  const std::size_t n_test = static_cast<std::size_t>(std::floor(test_fraction * n));
  const std::size_t d = full.input_dim();

  auto take = [&](std::size_t begin, std::size_t count) {
    LabeledDataset part;
    part.num_classes = full.num_classes;
    part.inputs = Tensor({count, d});
    part.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t src = order[begin + i];
      std::copy(full.inputs.row(src).begin(), full.inputs.row(src).end(),
                part.inputs.row(i).begin());
      part.labels[i] = full.labels[src];
    }
    return part;
  };

  SplitDataset split;
  split.test = take(0, n_test);
  split.train = take(n_test, n - n_test);
  return split;
}

LabeledDataset make_blobs(const BlobsOptions& opts, Rng& rng) {
  if (opts.classes < 2) throw ConfigError("blobs need at least 2 classes");
  const double min_dist = opts.min_separation_sigmas * opts.sigma;

  std::vector<std::vector<double>> centers;
  while (centers.size() < static_cast<std::size_t>(opts.classes)) {
    std::vector<double> c(opts.dim);
    for (double& v : c) v = rng.uniform(-0.8, 0.8);
    bool ok = true;
    for (const auto& other : centers) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < opts.dim; ++i) {
        d2 += (c[i] - other[i]) * (c[i] - other[i]);
      }
      if (std::sqrt(d2) < min_dist) {
        ok = false;
        break;
      }
    }
    if (ok) centers.push_back(std::move(c));
  }

  const std::size_t n = static_cast<std::size_t>(opts.classes) * opts.per_class;
  LabeledDataset ds;
  ds.num_classes = opts.classes;
  ds.inputs = Tensor({n, opts.dim});
  ds.labels.resize(n);
  std::size_t row = 0;
  for (int k = 0; k < opts.classes; ++k) {
    for (std::size_t s = 0; s < opts.per_class; ++s, ++row) {
      auto out = ds.inputs.row(row);
      for (std::size_t i = 0; i < opts.dim; ++i) {
        out[i] = centers[k][i] + opts.sigma * rng.normal();
      }
      ds.labels[row] = k;
    }
  }
  return ds;
}

namespace {

// 8x8 glyphs for digits 0..9. '#' marks foreground.
const std::array<std::array<const char*, 8>, 10> kDigitGlyphs = {{
    {"..####..",
     ".#....#.",
     ".#....#.",
     ".#....#.",
     ".#....#.",
     ".#....#.",
     "..####..",
     "........"},
    {"...##...",
     "..###...",
     "...##...",
     "...##...",
     "...##...",
     "...##...",
     "..####..",
     "........"},
    {"..####..",
     ".#....#.",
     "......#.",
     ".....#..",
     "...##...",
     "..#.....",
     ".######.",
     "........"},
    {"..####..",
     ".#....#.",
     "......#.",
     "...###..",
     "......#.",
     ".#....#.",
     "..####..",
     "........"},
    {"....##..",
     "...#.#..",
     "..#..#..",
     ".#...#..",
     ".######.",
     ".....#..",
     ".....#..",
     "........"},
    {".######.",
     ".#......",
     ".#####..",
     "......#.",
     "......#.",
     ".#....#.",
     "..####..",
     "........"},
    {"..####..",
     ".#......",
     ".#####..",
     ".#....#.",
     ".#....#.",
     ".#....#.",
     "..####..",
     "........"},
    {".######.",
     "......#.",
     ".....#..",
     "....#...",
     "...#....",
     "...#....",
     "...#....",
     "........"},
    {"..####..",
     ".#....#.",
     ".#....#.",
     "..####..",
     ".#....#.",
     ".#....#.",
     "..####..",
     "........"},
    {"..####..",
     ".#....#.",
     ".#....#.",
     "..#####.",
     "......#.",
     "......#.",
     "..####..",
     "........"},
}};

}  // namespace

LabeledDataset make_digits(const DigitsOptions& opts, Rng& rng) {
  const std::size_t n = 10 * opts.per_class;
  LabeledDataset ds;
  ds.num_classes = 10;
  ds.inputs = Tensor({n, 64});
  ds.labels.resize(n);

  std::size_t row = 0;
  for (int digit = 0; digit < 10; ++digit) {
    for (std::size_t s = 0; s < opts.per_class; ++s, ++row) {
      const int dx = static_cast<int>(rng.index(3)) - 1;
      const int dy = static_cast<int>(rng.index(3)) - 1;
      const double intensity = rng.uniform(0.7, 1.0);
      auto out = ds.inputs.row(row);
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          const int sy = y - dy;
          const int sx = x - dx;
          bool on = false;
          if (sy >= 0 && sy < 8 && sx >= 0 && sx < 8) {
            on = kDigitGlyphs[digit][sy][sx] == '#';
          }
          double v = (on ? intensity : 0.0) * 2.0 - 1.0;
          v += opts.noise_sigma * rng.normal();
          out[y * 8 + x] = std::clamp(v, -1.0, 1.0);
        }
      }
      ds.labels[row] = digit;
    }
  }
  return ds;
}

namespace {

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated IDX header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open IDX image file " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open IDX label file " + labels_path);

  const std::uint32_t img_magic = read_be32(img);
  if (img_magic != 0x00000803u) {
    throw IoError("bad IDX image magic in " + images_path);
  }
  const std::uint32_t n = read_be32(img);
  const std::uint32_t rows = read_be32(img);
  const std::uint32_t cols = read_be32(img);

  const std::uint32_t lab_magic = read_be32(lab);
  if (lab_magic != 0x00000801u) {
    throw IoError("bad IDX label magic in " + labels_path);
  }
  const std::uint32_t n_labels = read_be32(lab);
  if (n != n_labels) {
    throw IoError("IDX image/label counts differ: " + std::to_string(n) + " vs " +
                  std::to_string(n_labels));
  }

  const std::size_t dim = static_cast<std::size_t>(rows) * cols;
  LabeledDataset ds;
  ds.inputs = Tensor({n, dim});
  ds.labels.resize(n);

  std::vector<unsigned char> buf(dim);
  int max_label = -1;
  for (std::uint32_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
    if (!img) throw IoError("truncated IDX image payload in " + images_path);
    auto out = ds.inputs.row(i);
    for (std::size_t j = 0; j < dim; ++j) {
      out[j] = static_cast<double>(buf[j]) / 255.0 * 2.0 - 1.0;
    }
    char c = 0;
    lab.read(&c, 1);
    if (!lab) throw IoError("truncated IDX label payload in " + labels_path);
    ds.labels[i] = static_cast<unsigned char>(c);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

void save_idx(const LabeledDataset& ds, std::size_t rows, std::size_t cols,
              const std::string& images_path, const std::string& labels_path) {
  if (rows * cols != ds.input_dim()) {
    throw DimensionError("save_idx: rows*cols != input dim");
  }
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot write IDX image file " + images_path);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot write IDX label file " + labels_path);

  write_be32(img, 0x00000803u);
  write_be32(img, static_cast<std::uint32_t>(ds.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  write_be32(lab, 0x00000801u);
  write_be32(lab, static_cast<std::uint32_t>(ds.size()));

  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto in = ds.inputs.row(i);
    for (double v : in) {
      const double scaled = std::clamp((v + 1.0) / 2.0 * 255.0, 0.0, 255.0);
      const unsigned char byte = static_cast<unsigned char>(std::lround(scaled));
      img.write(reinterpret_cast<const char*>(&byte), 1);
    }
    const char label = static_cast<char>(ds.labels[i]);
    lab.write(&label, 1);
  }
}

LabeledDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV file " + path);

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("CSV parse error at " + path + ":" + std::to_string(line_no) +
                      ", token '" + cell + "'");
      }
    }
    if (values.size() < 2) {
      throw IoError("CSV line " + std::to_string(line_no) + " has no feature columns");
    }
    labels.push_back(static_cast<int>(values[0]));
    rows.push_back(std::vector<double>(values.begin() + 1, values.end()));
  }
  if (rows.empty()) throw IoError("CSV file " + path + " is empty");

  LabeledDataset ds;
  ds.inputs = Tensor::from_rows(rows);
  ds.labels = std::move(labels);
  int max_label = 0;
  for (int label : ds.labels) max_label = std::max(max_label, label);
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

namespace {

std::map<std::string, std::string> parse_options(const std::string& text) {
  std::map<std::string, std::string> opts;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("bad dataset option '" + item + "', expected key=value");
    }
    opts[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return opts;
}

}  // namespace

LabeledDataset load_dataset(const std::string& descriptor, Rng& rng) {
  const auto colon = descriptor.find(':');
  const std::string kind = descriptor.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : descriptor.substr(colon + 1);

  if (kind == "blobs") {
    BlobsOptions opts;
    for (const auto& [key, value] : parse_options(rest)) {
      if (key == "classes") opts.classes = std::stoi(value);
      else if (key == "dim") opts.dim = std::stoul(value);
      else if (key == "per_class") opts.per_class = std::stoul(value);
      else if (key == "sigma") opts.sigma = std::stod(value);
      else throw ConfigError("unknown blobs option '" + key + "'");
    }
    return make_blobs(opts, rng);
  }
  if (kind == "digits") {
    DigitsOptions opts;
    for (const auto& [key, value] : parse_options(rest)) {
      if (key == "per_class") opts.per_class = std::stoul(value);
      else if (key == "noise_sigma") opts.noise_sigma = std::stod(value);
      else throw ConfigError("unknown digits option '" + key + "'");
    }
    return make_digits(opts, rng);
  }
  if (kind == "csv") {
    if (rest.empty()) throw ConfigError("csv dataset needs a path: csv:PATH");
    return load_csv(rest);
  }
  if (kind == "idx") {
    const auto comma = rest.find(',');
    if (comma == std::string::npos) {
      throw ConfigError("idx dataset needs two paths: idx:IMAGES,LABELS");
    }
    return load_idx(rest.substr(0, comma), rest.substr(comma + 1));
  }
  throw ConfigError("unknown dataset descriptor '" + descriptor + "'");
}

}  // namespace dfme
