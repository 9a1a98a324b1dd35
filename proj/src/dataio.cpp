#include "gcvamd/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <boost/algorithm/string.hpp>
#include <boost/tokenizer.hpp>

#include "gcvamd/checkpoint.hpp"
#include "gcvamd/errors.hpp"

namespace gcvamd {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
  std::vector<std::string> fields;
  try {
    Tokenizer tokens(line, boost::escaped_list_separator<char>('\\', ',', '"'));
    for (const auto& t : tokens) fields.push_back(boost::algorithm::trim_copy(t));
  } catch (const boost::escaped_list_error& e) {
    throw DecodeError("malformed CSV at line " + std::to_string(line_no) + ": " + e.what());
  }
  return fields;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (boost::algorithm::iequals(header[i], name)) return i;
  throw DecodeError("manifest has no column named '" + name + "'");
}

std::optional<int> lookup(const std::map<std::string, int>& values, const std::string& raw) {
  const std::string key = boost::algorithm::to_lower_copy(boost::algorithm::trim_copy(raw));
  for (const auto& [k, v] : values)
    if (boost::algorithm::to_lower_copy(k) == key) return v;
  return std::nullopt;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

LoadReport load_octdl(const std::string& root, const std::string& manifest_path, const DatasetMapping& mapping) {
  std::ifstream in(manifest_path);
  if (!in) throw DecodeError("cannot open manifest " + manifest_path);
  std::string line;
  if (!std::getline(in, line)) throw DecodeError("manifest " + manifest_path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line, 1);
  const std::size_t file_col = column_index(header, mapping.file_col);
  const std::size_t disease_col = column_index(header, mapping.disease_col);
  const std::size_t neo_col = column_index(header, mapping.neo_col);
  const std::size_t drusen_col = column_index(header, mapping.drusen_col);
  const std::size_t severity_col = column_index(header, mapping.severity_col);

  LoadReport report;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (boost::algorithm::trim_copy(line).empty()) continue;
    const auto fields = split_csv_line(line, line_no);
    if (fields.size() != header.size())
      throw DecodeError("malformed CSV at line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    const std::string where = "line " + std::to_string(line_no) + ": ";
    const auto disease = lookup(mapping.disease_values, fields[disease_col]);
    if (!disease) {
      ++report.skipped;
      continue;
    }
    SampleRecord record;
    record.disease = fields[disease_col];
    record.amd = *disease == 1;
    const fs::path path = fs::path(root) / fields[file_col];
    record.path = path.string();
    if (!fs::exists(path)) {
      report.errors.push_back(where + "missing image file " + record.path);
      continue;
    }
    if (record.amd) {
      const auto neo = lookup(mapping.neo_values, fields[neo_col]);
      const auto drusen = lookup(mapping.drusen_values, fields[drusen_col]);
      const auto severity = lookup(mapping.severity_values, fields[severity_col]);
      if (!neo || !drusen || !severity) {
        report.errors.push_back(where + "unmapped label value");
        continue;
      }
      if (*neo < 0 || *neo > 1 || *drusen < 0 || *drusen > 1 || *severity < 1 || *severity > 3) {
        report.errors.push_back(where + "label out of range for an AMD record");
        continue;
      }
      record.u0 = *neo;
      record.u1 = *drusen;
      record.u2 = *severity;
    }
    report.records.push_back(std::move(record));
  }
  return report;
}

Vector preprocess(const Image8& image, const nn::Shape3& target) {
  if (image.height <= 0 || image.width <= 0 || image.channels <= 0)
    throw DecodeError("image has no pixels");
  if (target.h <= 0 || target.w <= 0 || (target.c != 1 && target.c != 3))
    throw std::invalid_argument("preprocess target must have 1 or 3 channels");
  const int colour = image.channels >= 3 ? 3 : 1;
  const double sy = static_cast<double>(image.height) / target.h;
  const double sx = static_cast<double>(image.width) / target.w;
  auto sample = [&](int y, int x, int c) -> double {
    const int src_c = colour == 1 ? 0 : c;
    return image.at(y, x, src_c);
  };
  Vector out(target.size());
  for (int y = 0; y < target.h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < target.w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < target.c; ++c) {
        double v;
        if (target.c == 1 && colour == 3) {
          auto gray = [&](int yy, int xx) {
            return 0.299 * image.at(yy, xx, 0) + 0.587 * image.at(yy, xx, 1) + 0.114 * image.at(yy, xx, 2);
          };
          v = (1 - ty) * ((1 - tx) * gray(y0, x0) + tx * gray(y0, x1)) +
              ty * ((1 - tx) * gray(y1, x0) + tx * gray(y1, x1));
        } else {
          v = (1 - ty) * ((1 - tx) * sample(y0, x0, c) + tx * sample(y0, x1, c)) +
              ty * ((1 - tx) * sample(y1, x0, c) + tx * sample(y1, x1, c));
        }
        out[(static_cast<Eigen::Index>(y) * target.w + x) * target.c + c] = v / 255.0;
      }
    }
  }
  return out;
}

std::vector<int> DatasetBundle::diagnosis() const {
  std::vector<int> out(static_cast<std::size_t>(labels.rows()));
  for (Eigen::Index i = 0; i < labels.rows(); ++i) out[static_cast<std::size_t>(i)] = labels(i, 2) >= 1.0 ? 1 : 0;
  return out;
}

DatasetBundle DatasetBundle::select(const std::vector<Eigen::Index>& rows, const std::string& tag) const {
  DatasetBundle out;
  out.images = images.select(rows);
  out.labels.resize(static_cast<Eigen::Index>(rows.size()), labels.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.labels.row(static_cast<Eigen::Index>(i)) = labels.row(rows[i]);
  out.truth = truth;
  out.split = tag;
  return out;
}

DatasetBundle load_bundle(const std::vector<SampleRecord>& records, const nn::Shape3& shape,
                          std::vector<std::string>* errors) {
  std::vector<Vector> pixels;
  std::vector<const SampleRecord*> kept;
  for (const auto& r : records) {
    try {
      pixels.push_back(preprocess(read_image(r.path), shape));
      kept.push_back(&r);
    } catch (const DecodeError& e) {
      if (!errors) throw;
      errors->push_back(e.what());
    }
  }
  DatasetBundle bundle;
  bundle.images = ImageBatch(shape, static_cast<Eigen::Index>(kept.size()));
  bundle.labels.resize(static_cast<Eigen::Index>(kept.size()), 3);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    bundle.images.data.col(k) = pixels[i];
    bundle.labels.row(k) << kept[i]->u0, kept[i]->u1, kept[i]->u2;
  }
  bundle.split = "all";
  return bundle;
}

SplitIndices sample_splits(const std::vector<int>& amd, Engine& engine, const SplitSizes& sizes) {
  std::vector<Eigen::Index> amd_rows;
  std::vector<Eigen::Index> normal_rows;
  for (std::size_t i = 0; i < amd.size(); ++i) (amd[i] ? amd_rows : normal_rows).push_back(static_cast<Eigen::Index>(i));
  if (static_cast<int>(normal_rows.size()) <= sizes.train_normal)
    throw std::invalid_argument("need more than " + std::to_string(sizes.train_normal) + " normal samples, have " +
                                std::to_string(normal_rows.size()));
  const std::size_t test_normals = normal_rows.size() - static_cast<std::size_t>(sizes.train_normal);
  const std::size_t amd_needed = static_cast<std::size_t>(sizes.train_amd) + test_normals;
  if (amd_rows.size() < amd_needed)
    throw std::invalid_argument("need " + std::to_string(amd_needed) + " AMD samples, have " +
                                std::to_string(amd_rows.size()) + " (short by " +
                                std::to_string(amd_needed - amd_rows.size()) + ")");
  auto shuffle = [&](std::vector<Eigen::Index>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(engine() % i)]);
  };
  shuffle(amd_rows);
  shuffle(normal_rows);
  SplitIndices split;
  split.train.assign(amd_rows.begin(), amd_rows.begin() + sizes.train_amd);
  split.train.insert(split.train.end(), normal_rows.begin(), normal_rows.begin() + sizes.train_normal);
  split.test.assign(normal_rows.begin() + sizes.train_normal, normal_rows.end());
  split.test.insert(split.test.end(), amd_rows.begin() + sizes.train_amd,
                    amd_rows.begin() + static_cast<std::ptrdiff_t>(amd_needed));
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void SynthConfig::validate() const {
  if (shape.h < 8 || shape.w < 8 || (shape.c != 1 && shape.c != 3))
    throw std::invalid_argument("synthetic images need at least 8x8 pixels and 1 or 3 channels");
  if (n < 0) throw std::invalid_argument("synthetic sample count must be nonnegative");
  if (!(w0 >= 0.0 && w1 >= 0.0 && w0 + w1 > 0.0)) throw std::invalid_argument("synthetic edge weights must be >= 0");
  if (!(noise >= 0.0)) throw std::invalid_argument("synthetic noise scale must be nonnegative");
}

Vector render_synthetic(const SynthFactors& f, const nn::Shape3& shape, const Matrix& speckle) {
  if (speckle.rows() != shape.h || speckle.cols() != shape.w)
    throw std::invalid_argument("speckle field must be h x w");
  const double h = shape.h;
  const double w = shape.w;
  const double centre = 0.55 * h;
  const double half = 0.08 * h;
  const double edge = 0.6 * h / 64.0;
  const double blob_r = 0.05 * h;
  const double blob_y = centre - 0.06 * h;
  const double gain = 0.75 + 0.25 * f.s2;
  const double grain = 0.05 + 0.25 * f.s2;
  constexpr double kPi = 3.14159265358979323846;
  Vector out(shape.size());
  for (int x = 0; x < shape.w; ++x) {
    const double dx = (x - 0.5 * w) / (0.12 * w);
    const double bump = f.s0 * 0.18 * h * std::exp(-dx * dx);
    const double wave = f.s1 * 0.07 * h * std::sin(2.0 * kPi * 3.0 * x / w);
    const double top = centre - half - bump + wave;
    const double bottom = centre + half + wave;
    for (int y = 0; y < shape.h; ++y) {
      const double band = sigmoid((y - top) / edge) * sigmoid((bottom - y) / edge);
      const double by = (y - blob_y) / blob_r;
      const double bx = (x - 0.5 * w) / blob_r;
      const double blob = 0.5 * f.s0 * std::exp(-0.5 * (bx * bx + by * by));
      const double base = 0.08 + 0.55 * band + blob;
      const double v = std::clamp(base * gain * std::max(0.0, 1.0 + grain * speckle(y, x)), 0.0, 1.0);
      for (int c = 0; c < shape.c; ++c) out[(static_cast<Eigen::Index>(y) * shape.w + x) * shape.c + c] = v;
    }
  }
  return out;
}

SynthBundle synth_generate(const SynthConfig& config) {
  config.validate();
  Engine engine(derive_seed(config.seed, Stream::kSynthetic));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  SynthBundle out;
  out.data.images = ImageBatch(config.shape, config.n);
  out.data.labels.resize(config.n, 3);
  out.factors.resize(config.n, 3);
  Matrix speckle(config.shape.h, config.shape.w);
  for (int i = 0; i < config.n; ++i) {
    const double s0 = uniform(engine);
    const double s1 = uniform(engine);
    const double s2 = config.w0 * s0 + config.w1 * s1 + config.noise * normal(engine);
    for (Eigen::Index k = 0; k < speckle.size(); ++k) speckle.data()[k] = normal(engine);
    const double s2n = std::clamp(s2 / (config.w0 + config.w1), 0.0, 1.0);
    const int u0 = s0 > config.threshold0 ? 1 : 0;
    const int u1 = s1 > config.threshold1 ? 1 : 0;
    int u2 = std::clamp(static_cast<int>(std::floor(4.0 * s2n)), 0, 3);
    if (u0 == 0 && u1 == 0 && s2n < config.normal_threshold) u2 = 0;
    out.data.images.data.col(i) = render_synthetic({s0, s1, s2n}, config.shape, speckle);
    out.data.labels.row(i) << u0, u1, u2;
    out.factors.row(i) << s0, s1, s2;
  }
  BinaryGraph truth(3);
  if (config.w0 != 0.0) truth.add_edge(0, 2);
  if (config.w1 != 0.0) truth.add_edge(1, 2);
  out.data.truth = truth;
  out.data.split = "synthetic";
  return out;
}

void save_bundle(const DatasetBundle& bundle, const std::string& path) {
  Checkpoint checkpoint;
  ArrayRecord images;
  images.name = "images";
  images.dims = {static_cast<std::uint64_t>(bundle.images.count()), static_cast<std::uint64_t>(bundle.images.shape.h),
                 static_cast<std::uint64_t>(bundle.images.shape.w), static_cast<std::uint64_t>(bundle.images.shape.c)};
  images.values.assign(bundle.images.data.data(), bundle.images.data.data() + bundle.images.data.size());
  checkpoint.arrays.push_back(std::move(images));
  checkpoint.arrays.push_back(ArrayRecord::from_matrix("labels", bundle.labels));
  save_checkpoint(checkpoint, path);
}

DatasetBundle load_bundle_cache(const std::string& path) {
  const Checkpoint checkpoint = load_checkpoint(path);
  for (const auto& a : checkpoint.arrays)
    if (a.name != "images" && a.name != "labels") throw CheckpointFormatError("unknown array name " + a.name);
  const ArrayRecord& images = checkpoint.require("images");
  if (images.dims.size() != 4) throw CheckpointFormatError("images must be N x H x W x C");
  DatasetBundle bundle;
  const nn::Shape3 shape{static_cast<int>(images.dims[1]), static_cast<int>(images.dims[2]),
                         static_cast<int>(images.dims[3])};
  bundle.images = ImageBatch(shape, static_cast<Eigen::Index>(images.dims[0]));
  std::copy(images.values.begin(), images.values.end(), bundle.images.data.data());
  bundle.labels = checkpoint.require("labels").to_matrix();
  if (bundle.labels.rows() != bundle.images.count() || bundle.labels.cols() != 3)
    throw CheckpointFormatError("labels must be N x 3 matching the image count");
  bundle.split = "cache";
  return bundle;
}

}  // namespace gcvamd
