#include "dmlganr/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "dmlganr/binary_io.hpp"

namespace dmlganr {

namespace {

constexpr std::uint32_t kFeatureVersion = 1;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void finalize(FeatureDataset& ds) {
  if (ds.records.empty()) throw ParseError("empty dataset: no records");
  std::uint32_t max_label = 0;
  for (const auto& r : ds.records) max_label = std::max(max_label, r.label);
  ds.class_count = max_label + 1;
  ds.dim = ds.records.front().vector.size();
  ds.validate();
}

FeatureDataset read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset: " + path.string() + " has no header");
  const auto header = split_commas(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw ParseError("CSV header must start with id,label,f0");
  }
  const Index dim = static_cast<Index>(header.size()) - 2;
  for (Index k = 0; k < dim; ++k) {
    if (header[static_cast<std::size_t>(k) + 2] != "f" + std::to_string(k)) {
      throw ParseError("CSV header column " + std::to_string(k + 2) + " must be f" + std::to_string(k));
    }
  }

  FeatureDataset ds;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    const std::string where = "record " + std::to_string(index);
    if (static_cast<Index>(fields.size()) != dim + 2) {
      throw ParseError(where + ": expected " + std::to_string(dim + 2) + " fields, got " +
                       std::to_string(fields.size()));
    }
    FeatureRecord rec;
    rec.id = std::string(fields[0]);
    {
      const auto f = fields[1];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), rec.label);
      if (ec != std::errc() || p != f.data() + f.size()) throw ParseError(where + ": bad label");
    }
    rec.vector = Tensor({dim});
    for (Index k = 0; k < dim; ++k) {
      const auto f = fields[static_cast<std::size_t>(k) + 2];
      double v = 0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size()) {
        throw ParseError(where + ": bad value in column f" + std::to_string(k));
      }
      if (!std::isfinite(v)) throw ParseError(where + ": non-finite value in column f" + std::to_string(k));
      rec.vector[k] = v;
    }
    ds.records.push_back(std::move(rec));
    ++index;
  }
  finalize(ds);
  return ds;
}

FeatureDataset read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  in.peek();
  if (in.eof()) throw ParseError("empty dataset: " + path.string() + " is empty");
  io::expect_magic(in, "DMLF");
  const auto version = io::get<std::uint32_t>(in, "version");
  if (version != kFeatureVersion) {
    throw FormatError("unsupported DMLF version " + std::to_string(version));
  }
  const auto count = io::get<std::uint32_t>(in, "record count");
  const auto dim = io::get<std::uint32_t>(in, "dimension");
  const auto has_images = io::get<std::uint8_t>(in, "image flag");
  if (count == 0) throw ParseError("empty dataset: record count is zero");
  if (dim == 0) throw ParseError("feature dimension is zero");

  FeatureDataset ds;
  ds.records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "record " + std::to_string(i);
    try {
      FeatureRecord rec;
      rec.id = io::get_string16(in, "id");
      rec.label = io::get<std::uint32_t>(in, "label");
      rec.vector = Tensor({static_cast<Index>(dim)});
      for (std::uint32_t k = 0; k < dim; ++k) {
        const float v = io::get<float>(in, "feature value");
        if (!std::isfinite(v)) throw ParseError(where + ": non-finite feature value");
        rec.vector[k] = v;
      }
      if (has_images) {
        const auto c = io::get<std::uint32_t>(in, "image C");
        const auto h = io::get<std::uint32_t>(in, "image H");
        const auto w = io::get<std::uint32_t>(in, "image W");
        Tensor img({static_cast<Index>(c), static_cast<Index>(h), static_cast<Index>(w)});
        for (Index k = 0; k < img.size(); ++k) img[k] = io::get<float>(in, "pixel");
        rec.image = std::move(img);
      }
      ds.records.push_back(std::move(rec));
    } catch (const FormatError& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  finalize(ds);
  return ds;
}

}  // namespace

Tensor FeatureDataset::feature_matrix(const std::vector<std::size_t>& rows) const {
  Tensor m({static_cast<Index>(rows.size()), dim});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.matrix().row(static_cast<Index>(i)) = records.at(rows[i]).vector.vec().transpose();
  }
  return m;
}

Tensor FeatureDataset::feature_matrix() const {
  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return feature_matrix(all);
}

Tensor FeatureDataset::image_batch(const std::vector<std::size_t>& rows) const {
  if (!has_images()) throw StateError("dataset carries no images");
  const Shape& s = records.front().image->shape();
  Tensor batch({static_cast<Index>(rows.size()), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < rows.size(); ++i) batch.set_slice(static_cast<Index>(i), *records.at(rows[i]).image);
  return batch;
}

std::vector<std::uint32_t> FeatureDataset::labels(const std::vector<std::size_t>& rows) const {
  std::vector<std::uint32_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(records.at(r).label);
  return out;
}

std::vector<std::uint32_t> FeatureDataset::labels() const {
  std::vector<std::uint32_t> out;
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

void FeatureDataset::validate() const {
  const bool images = has_images();
  Shape image_shape;
  if (images) image_shape = records.front().image->shape();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string where = "record " + std::to_string(i);
    if (r.vector.rank() != 1 || r.vector.size() != dim) {
      throw ParseError(where + ": dimension drift (expected " + std::to_string(dim) + ")");
    }
    if (!r.vector.all_finite()) throw ParseError(where + ": non-finite feature value");
    if (r.label >= class_count) throw ParseError(where + ": label out of range");
    if (r.image.has_value() != images) throw ParseError(where + ": image presence differs");
    if (images) {
      if (r.image->shape() != image_shape) throw ParseError(where + ": image shape drift");
      if (r.image->rank() != 3) throw ParseError(where + ": image must be CHW");
      const auto& v = r.image->vec();
      if (!r.image->all_finite() || (v.size() && (v.minCoeff() < -1.0 || v.maxCoeff() > 1.0))) {
        throw ParseError(where + ": image values must lie in [-1, 1]");
      }
    }
  }
}

void FeatureDataset::require_pairs_per_class() const {
  std::vector<std::size_t> counts(class_count, 0);
  for (const auto& r : records) ++counts[r.label];
  for (std::uint32_t c = 0; c < class_count; ++c) {
    if (counts[c] < 2) {
      throw ValidationError("class " + std::to_string(c) + " has fewer than 2 records");
    }
  }
}

FeatureFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? FeatureFormat::Csv : FeatureFormat::Binary;
}

FeatureDataset ingest_features(const std::filesystem::path& path, FeatureFormat format) {
  if (!std::filesystem::exists(path)) throw IoError("feature file does not exist: " + path.string());
  return format == FeatureFormat::Csv ? read_csv(path) : read_binary(path);
}

FeatureDataset ingest_features(const std::filesystem::path& path) {
  return ingest_features(path, format_from_path(path));
}

void write_features_csv(const FeatureDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,label";
  for (Index k = 0; k < dataset.dim; ++k) out << ",f" << k;
  out << '\n';
  for (const auto& r : dataset.records) {
    if (r.id.find_first_of(",\n") != std::string::npos) {
      throw FormatError("record id '" + r.id + "' cannot be written to CSV");
    }
    out << r.id << ',' << r.label;
    for (Index k = 0; k < r.vector.size(); ++k) out << ',' << format_double(r.vector[k]);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_features_binary(const FeatureDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  io::put_magic(out, "DMLF");
  io::put<std::uint32_t>(out, kFeatureVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.records.size()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.dim));
  const bool images = dataset.has_images();
  io::put<std::uint8_t>(out, images ? 1 : 0);
  for (const auto& r : dataset.records) {
    io::put_string16(out, r.id);
    io::put<std::uint32_t>(out, r.label);
    for (double v : r.vector.values()) io::put<float>(out, static_cast<float>(v));
    if (images) {
      const Tensor& img = *r.image;
      for (Index a = 0; a < 3; ++a) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(img.dim(a)));
      for (double v : img.values()) io::put<float>(out, static_cast<float>(v));
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_features(const FeatureDataset& dataset, const std::filesystem::path& path,
                    FeatureFormat format) {
  if (format == FeatureFormat::Csv) {
    write_features_csv(dataset, path);
  } else {
    write_features_binary(dataset, path);
  }
}

FeatureDataset synth_dataset(const SynthParams& p) {
  if (p.classes < 2 || p.per_class < 2) throw ValidationError("synth needs >= 2 classes and >= 2 per class");
  if (p.dim < 1) throw ValidationError("synth dimension must be positive");
  if (p.image_side < 0) throw ValidationError("synth image side must be non-negative");

  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);

  // Class means: cluster_sep along orthonormal directions (pairs sit sep * sqrt(2) apart).
  const Index k = p.classes;
  Eigen::MatrixXd basis(p.dim, k);
  for (Index j = 0; j < k; ++j) {
    for (Index i = 0; i < p.dim; ++i) basis(i, j) = normal(rng);
  }
  if (k <= p.dim) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
    basis = qr.householderQ() * Eigen::MatrixXd::Identity(p.dim, k);
  } else {
    basis.colwise().normalize();
  }
  const Eigen::MatrixXd means = basis * p.cluster_sep;

  FeatureDataset ds;
  ds.class_count = p.classes;
  ds.dim = p.dim;
  const Index side = p.image_side;
  for (std::uint32_t c = 0; c < p.classes; ++c) {
    const double fx = 1.0 + c % 3, fy = 1.0 + (c / 3) % 3;
    for (std::uint32_t s = 0; s < p.per_class; ++s) {
      FeatureRecord rec;
      rec.id = "c" + std::to_string(c) + "_" + std::to_string(s);
      rec.label = c;
      rec.vector = Tensor({p.dim});
      for (Index i = 0; i < p.dim; ++i) rec.vector[i] = to_f32(means(i, c) + normal(rng));
      if (side > 0) {
        Tensor img({3, side, side});
        const double shift = jitter(rng);
        for (Index ch = 0; ch < 3; ++ch) {
          const double phase = 0.7 * c + 2.1 * static_cast<double>(ch) + shift;
          for (Index y = 0; y < side; ++y) {
            for (Index x = 0; x < side; ++x) {
              const double t = 2.0 * std::numbers::pi * (fx * x + fy * y) / static_cast<double>(side);
              img(ch, y, x) = to_f32(0.9 * std::sin(t + phase));
            }
          }
        }
        rec.image = std::move(img);
      }
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

Split stratified_split(const FeatureDataset& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(dataset.class_count);
  for (std::size_t i = 0; i < dataset.records.size(); ++i) by_class[dataset.records[i].label].push_back(i);
  std::mt19937_64 rng(seed);
  Split split;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(members.size())));
    split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

FeatureDataset subset(const FeatureDataset& dataset, const std::vector<std::size_t>& rows) {
  FeatureDataset out;
  out.class_count = dataset.class_count;
  out.dim = dataset.dim;
  out.records.reserve(rows.size());
  for (auto r : rows) out.records.push_back(dataset.records.at(r));
  return out;
}

}  // namespace dmlganr
