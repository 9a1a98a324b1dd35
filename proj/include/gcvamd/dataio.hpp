#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gcvamd/causal_graph.hpp"
#include "gcvamd/image.hpp"
#include "gcvamd/image_io.hpp"
#include "gcvamd/rng.hpp"

namespace gcvamd {

/// One manifest row: u0 neovascularization {0,1}, u1 drusen {0,1},
/// u2 severity {0..3}. Normal rows carry (0, 0, 0).
struct SampleRecord {
  std::string path;
  int u0 = 0;
  int u1 = 0;
  int u2 = 0;
  std::string disease;
  bool amd = false;
};

/// Manifest column names and value dictionaries. Dictionary keys are matched
/// case-insensitively after trimming.
struct DatasetMapping {
  std::string file_col = "file";
  std::string disease_col = "disease";
  std::string neo_col = "neovascularization";
  std::string drusen_col = "drusen";
  std::string severity_col = "severity";
  std::map<std::string, int> disease_values{{"amd", 1}, {"normal", 0}, {"norm", 0}};
  std::map<std::string, int> neo_values{{"no", 0}, {"suspected", 1}, {"yes", 1}};
  std::map<std::string, int> drusen_values{{"no", 0}, {"yes", 1}};
  std::map<std::string, int> severity_values{{"none", 0}, {"early", 1}, {"intermediate", 2}, {"late", 3}};
};

struct LoadReport {
  std::vector<SampleRecord> records;
  std::size_t skipped = 0;          // rows of other diseases
  std::vector<std::string> errors;  // per-row problems, row kept out
};

/// Reads a CSV manifest with a header row. Image paths are resolved against
/// `root` and must exist. Throws DecodeError for malformed CSV.
LoadReport load_octdl(const std::string& root, const std::string& manifest_path, const DatasetMapping& mapping);

/// Bilinear resize (half-pixel centers), gray replicated to 3 channels when the
/// target has 3, alpha dropped, values scaled by 1/255. Returns shape.size() values.
Vector preprocess(const Image8& image, const nn::Shape3& target);

struct DatasetBundle {
  ImageBatch images;
  Matrix labels;  // N x 3
  std::optional<BinaryGraph> truth;
  std::string split;

  Eigen::Index size() const { return images.count(); }
  /// 1 for AMD (severity >= 1), else 0.
  std::vector<int> diagnosis() const;
  DatasetBundle select(const std::vector<Eigen::Index>& rows, const std::string& tag) const;
};

/// Decodes and preprocesses every record; undecodable files are reported in
/// `errors` and left out.
DatasetBundle load_bundle(const std::vector<SampleRecord>& records, const nn::Shape3& shape,
                          std::vector<std::string>* errors);

struct SplitSizes {
  int train_amd = 150;
  int train_normal = 150;
};

struct SplitIndices {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

/// Train: the requested numbers of random AMD and normal samples. Test: every
/// remaining normal plus as many random remaining AMD samples.
SplitIndices sample_splits(const std::vector<int>& amd, Engine& engine, const SplitSizes& sizes = {});

struct SynthConfig {
  nn::Shape3 shape{64, 64, 3};
  int n = 300;
  double w0 = 0.8;  // weight of s0 -> s2
  double w1 = 0.6;  // weight of s1 -> s2
  double noise = 0.1;
  std::uint64_t seed = 0;
  double threshold0 = 0.5;
  double threshold1 = 0.5;
  double normal_threshold = 0.5;  // normalized s2 below which factor-free samples are normal

  void validate() const;
};

/// Latent factors behind one synthetic image; s2 is normalized to [0, 1].
struct SynthFactors {
  double s0 = 0.0;
  double s1 = 0.0;
  double s2 = 0.0;
};

/// Renders one synthetic image. `speckle` holds one standard-normal draw per
/// pixel (h x w).
Vector render_synthetic(const SynthFactors& factors, const nn::Shape3& shape, const Matrix& speckle);

struct SynthBundle {
  DatasetBundle data;
  Matrix factors;  // N x 3 (s0, s1, s2) before normalization
};

SynthBundle synth_generate(const SynthConfig& config);

/// Cache the bundle as a checkpoint container with arrays `images` and `labels`.
void save_bundle(const DatasetBundle& bundle, const std::string& path);
DatasetBundle load_bundle_cache(const std::string& path);

}  // namespace gcvamd
