#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mer {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Provenance { kSynthetic, kFile };

/// Feature rows with integer labels in [0, class_count).
///
/// `original_labels` and `corruption_mask` are kept in step with `labels`:
/// mask[i] is true exactly when labels[i] was rewritten by corrupt_labels,
/// in which case original_labels[i] holds the label it replaced.
struct LabeledDataset {
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;
  Provenance provenance = Provenance::kSynthetic;
  std::string source;  // spec string or file path
  std::vector<bool> corruption_mask;
  std::vector<std::size_t> original_labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features.cols()); }
  std::size_t corrupted_count() const;
  std::vector<std::size_t> class_sizes() const;

  /// Throws InvalidInput if any invariant is broken.
  void validate() const;
};

/// Parameters of the synthetic fine-grained generator.
///
/// Classes come in small groups (`group_size`, default 3). Group anchors sit on
/// a sphere of radius `group_radius * spacing`; each class center lies on a
/// thin shell of radius `spacing` around its anchor, so classes inside a group
/// are confusable while groups are well separated. Samples are the class
/// center plus isotropic Gaussian noise with standard deviation `noise_scale`.
struct SyntheticSpec {
  std::size_t class_count = 20;
  std::size_t samples_per_class = 100;
  // Class k receives ceil(samples_per_class * imbalance_ratio^k) samples.
  double imbalance_ratio = 1.0;
  std::size_t feature_dim = 32;
  double spacing = 1.0;
  double noise_scale = 0.45;
  std::size_t group_size = 3;
  double group_radius = 4.0;
  std::uint64_t seed = 1;

  void validate() const;

  /// "synthetic:classes=20,per_class=100,dim=32,..." Keys not given keep defaults.
  static SyntheticSpec parse(const std::string& text);
  std::string to_string() const;
};

struct SyntheticDataset {
  LabeledDataset data;
  Matrix centers;  // class_count x feature_dim
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Accuracy of assigning each row to the nearest class center (ties to the
/// lowest index). Serves as the ceiling metric for a synthetic dataset.
double nearest_center_accuracy(const LabeledDataset& ds, const Matrix& centers);

/// Rewrites exactly floor(rate * N) labels, chosen without replacement, to a
/// label drawn uniformly from the C - 1 wrong classes.
LabeledDataset corrupt_labels(const LabeledDataset& ds, double rate, std::uint64_t seed);

struct CsvSchema {
  // Column holding the label; negative values count from the end (-1 = last).
  int label_column = -1;
  char delimiter = ',';
  bool has_header = false;
  // Inferred as max label + 1 when empty.
  std::optional<std::size_t> class_count;
};

LabeledDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
LabeledDataset parse_csv(const std::string& text, const CsvSchema& schema = {},
                         const std::string& source = "<memory>");
/// Writes features followed by the label as the last column, shortest
/// round-trip decimal formatting.
void save_csv(const LabeledDataset& ds, const std::filesystem::path& path, bool write_header = false);
std::string to_csv(const LabeledDataset& ds, bool write_header = false);

struct SplitResult {
  LabeledDataset train;
  LabeledDataset eval;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> eval_indices;
  // False when some class had fewer than 2 samples and the split fell back to
  // an unstratified shuffle.
  bool stratified = true;
};

/// Stratified, seeded split. Each class of size n contributes
/// round(fraction * n) rows to train, clamped to [1, n - 1].
SplitResult split(const LabeledDataset& ds, double train_fraction, std::uint64_t seed);

/// Copies the selected rows, carrying labels, mask and original labels along.
LabeledDataset subset(const LabeledDataset& ds, const std::vector<std::size_t>& rows);

}  // namespace mer
