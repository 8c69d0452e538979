#include "mer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string_view>
#include <system_error>

#include "mer/error.hpp"
#include "mer/random.hpp"

namespace mer {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view field, double& out) {
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

void append_double(std::string& out, double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

std::size_t round_clamped(double x, std::size_t lo, std::size_t hi) {
  const auto r = static_cast<std::size_t>(std::llround(x));
  return std::clamp(r, lo, hi);
}

}  // namespace

// --- LabeledDataset ---------------------------------------------------------

std::size_t LabeledDataset::corrupted_count() const {
  return static_cast<std::size_t>(std::count(corruption_mask.begin(), corruption_mask.end(), true));
}

std::vector<std::size_t> LabeledDataset::class_sizes() const {
  std::vector<std::size_t> sizes(class_count, 0);
  for (std::size_t y : labels) ++sizes.at(y);
  return sizes;
}

void LabeledDataset::validate() const {
  if (class_count < 2) throw InvalidInput("dataset needs at least 2 classes");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw InvalidInput("feature rows and label count differ");
  }
  if (corruption_mask.size() != labels.size() || original_labels.size() != labels.size()) {
    throw InvalidInput("corruption bookkeeping does not match the label count");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count || original_labels[i] >= class_count) {
      throw InvalidInput("label at row " + std::to_string(i) + " is out of range");
    }
    if (!corruption_mask[i] && labels[i] != original_labels[i]) {
      throw InvalidInput("row " + std::to_string(i) + " changed label without a corruption flag");
    }
  }
  if (!features.allFinite()) throw InvalidInput("dataset contains non-finite features");
}

// --- SyntheticSpec ----------------------------------------------------------

void SyntheticSpec::validate() const {
  if (class_count < 2) throw InvalidInput("synthetic spec needs at least 2 classes");
  if (samples_per_class == 0) throw InvalidInput("samples_per_class must be positive");
  if (feature_dim == 0) throw InvalidInput("feature_dim must be positive");
  if (!(noise_scale > 0.0)) throw InvalidInput("noise scale must be positive");
  if (!(spacing > 0.0)) throw InvalidInput("spacing must be positive");
  if (!(imbalance_ratio > 0.0 && imbalance_ratio <= 1.0)) {
    throw InvalidInput("imbalance ratio must lie in (0, 1]");
  }
  if (group_size == 0) throw InvalidInput("group_size must be positive");
  if (!(group_radius >= 0.0)) throw InvalidInput("group_radius must be non-negative");
}

SyntheticSpec SyntheticSpec::parse(const std::string& text) {
  std::string_view body = text;
  constexpr std::string_view kPrefix = "synthetic";
  if (body.substr(0, kPrefix.size()) != kPrefix) {
    throw InvalidInput("synthetic spec must start with 'synthetic': " + text);
  }
  body.remove_prefix(kPrefix.size());
  if (!body.empty() && body.front() == ':') body.remove_prefix(1);

  SyntheticSpec spec;
  if (trim(body).empty()) return spec;
  for (std::string_view item : split_fields(body, ',')) {
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) throw InvalidInput("expected key=value in synthetic spec, got '" + std::string(item) + "'");
    const std::string key(trim(item.substr(0, eq)));
    const std::string_view value = trim(item.substr(eq + 1));
    double v = 0.0;
    if (!parse_double(value, v) || !std::isfinite(v)) {
      throw InvalidInput("bad value for '" + key + "' in synthetic spec");
    }
    auto as_count = [&] {
      if (v < 0.0 || v != std::floor(v)) throw InvalidInput("'" + key + "' must be a non-negative integer");
      return static_cast<std::size_t>(v);
    };
    if (key == "classes") spec.class_count = as_count();
    else if (key == "per_class") spec.samples_per_class = as_count();
    else if (key == "imbalance") spec.imbalance_ratio = v;
    else if (key == "dim") spec.feature_dim = as_count();
    else if (key == "spacing") spec.spacing = v;
    else if (key == "noise") spec.noise_scale = v;
    else if (key == "group") spec.group_size = as_count();
    else if (key == "group_radius") spec.group_radius = v;
    else if (key == "seed") {
      // Seeds may exceed 2^53; reparse as an integer.
      std::uint64_t s = 0;
      const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), s);
      if (ec != std::errc() || ptr != value.data() + value.size()) throw InvalidInput("bad seed in synthetic spec");
      spec.seed = s;
    } else {
      throw InvalidInput("unknown synthetic spec key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

std::string SyntheticSpec::to_string() const {
  std::string out = "synthetic:classes=" + std::to_string(class_count) +
                    ",per_class=" + std::to_string(samples_per_class) + ",imbalance=";
  append_double(out, imbalance_ratio);
  out += ",dim=" + std::to_string(feature_dim) + ",spacing=";
  append_double(out, spacing);
  out += ",noise=";
  append_double(out, noise_scale);
  out += ",group=" + std::to_string(group_size) + ",group_radius=";
  append_double(out, group_radius);
  out += ",seed=" + std::to_string(seed);
  return out;
}

// --- generation -------------------------------------------------------------

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t c = spec.class_count;
  const std::size_t d = spec.feature_dim;

  Rng rng(mix_seed(spec.seed, 0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random_unit = [&](std::size_t dim) {
    Vector v(static_cast<Eigen::Index>(dim));
    double norm = 0.0;
    do {
      for (auto& x : v) x = gauss(rng);
      norm = v.norm();
    } while (norm == 0.0);
    return Vector(v / norm);
  };

  const std::size_t groups = (c + spec.group_size - 1) / spec.group_size;
  std::vector<Vector> anchors;
  anchors.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    anchors.push_back(random_unit(d) * spec.group_radius * spec.spacing);
  }

  Matrix centers(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < c; ++k) {
    centers.row(static_cast<Eigen::Index>(k)) =
        (anchors[k / spec.group_size] + random_unit(d) * spec.spacing).transpose();
  }

  std::vector<std::size_t> sizes(c);
  for (std::size_t k = 0; k < c; ++k) {
    const double n = static_cast<double>(spec.samples_per_class) * std::pow(spec.imbalance_ratio, static_cast<double>(k));
    // Guard against pow landing a hair above an integer.
    sizes[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(n - 1e-9)));
  }
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});

  SyntheticDataset out;
  LabeledDataset& ds = out.data;
  ds.class_count = c;
  ds.provenance = Provenance::kSynthetic;
  ds.source = spec.to_string();
  ds.features.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d));
  ds.labels.reserve(total);

  Rng noise_rng(mix_seed(spec.seed, 1));
  std::normal_distribution<double> noise(0.0, spec.noise_scale);
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t s = 0; s < sizes[k]; ++s, ++row) {
      for (std::size_t j = 0; j < d; ++j) {
        ds.features(row, static_cast<Eigen::Index>(j)) = centers(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) + noise(noise_rng);
      }
      ds.labels.push_back(k);
    }
  }
  ds.original_labels = ds.labels;
  ds.corruption_mask.assign(total, false);
  out.centers = std::move(centers);
  return out;
}

double nearest_center_accuracy(const LabeledDataset& ds, const Matrix& centers) {
  if (ds.size() == 0) return 0.0;
  if (centers.cols() != ds.features.cols()) throw InvalidInput("center dimension mismatch");
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    Eigen::Index best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < centers.rows(); ++k) {
      const double dist = (ds.features.row(i) - centers.row(k)).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    if (static_cast<std::size_t>(best) == ds.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// --- corruption -------------------------------------------------------------

LabeledDataset corrupt_labels(const LabeledDataset& ds, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw InvalidInput("corruption rate must lie in [0, 1]");
  if (ds.class_count < 2) throw InvalidInput("corruption needs at least 2 classes");
  const std::size_t n = ds.size();
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  const auto k = std::min(n, static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9)));

  LabeledDataset out = ds;
  if (out.original_labels.size() != n) out.original_labels = out.labels;
  if (out.corruption_mask.size() != n) out.corruption_mask.assign(n, false);
  if (k == 0) return out;

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::uniform_int_distribution<std::size_t> wrong(0, ds.class_count - 2);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t row = order[i];
    const std::size_t current = out.labels[row];
    const std::size_t r = wrong(rng);
    out.labels[row] = r < current ? r : r + 1;
    out.corruption_mask[row] = true;
  }
  return out;
}

// --- CSV --------------------------------------------------------------------

LabeledDataset parse_csv(const std::string& text, const CsvSchema& schema, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t label_idx = 0;
  bool header_pending = schema.has_header;

  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    const auto fields = split_fields(view, schema.delimiter);
    if (width == 0) {
      width = fields.size();
      if (width < 2) throw ParseError("need at least one feature column and a label column", line_no);
      const int col = schema.label_column < 0 ? static_cast<int>(width) + schema.label_column : schema.label_column;
      if (col < 0 || col >= static_cast<int>(width)) throw ParseError("label column out of range", line_no);
      label_idx = static_cast<std::size_t>(col);
    } else if (fields.size() != width) {
      throw ParseError("expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()), line_no);
    }
    for (std::size_t j = 0; j < width; ++j) {
      double v = 0.0;
      if (!parse_double(fields[j], v)) {
        throw ParseError("cannot parse '" + std::string(fields[j]) + "' as a number", line_no);
      }
      if (!std::isfinite(v)) throw ParseError("non-finite value in column " + std::to_string(j + 1), line_no);
      if (j == label_idx) {
        if (v < 0.0 || v != std::floor(v) || v > 1e15) {
          throw ParseError("label '" + std::string(fields[j]) + "' is not a non-negative integer", line_no);
        }
        labels.push_back(static_cast<std::size_t>(v));
        if (schema.class_count && labels.back() >= *schema.class_count) {
          throw InvalidInput("line " + std::to_string(line_no) + ": label " + std::to_string(labels.back()) +
                             " is not below the supplied class count " + std::to_string(*schema.class_count));
        }
      } else {
        values.push_back(v);
      }
    }
  }
  if (labels.empty()) throw ParseError("no data rows in " + source, 0);

  LabeledDataset ds;
  const auto n = static_cast<Eigen::Index>(labels.size());
  const auto d = static_cast<Eigen::Index>(width - 1);
  ds.features = Eigen::Map<const Matrix>(values.data(), n, d);
  ds.labels = std::move(labels);
  ds.class_count = schema.class_count.value_or(*std::max_element(ds.labels.begin(), ds.labels.end()) + 1);
  if (ds.class_count < 2) throw InvalidInput("dataset needs at least 2 classes; pass the class count explicitly");
  ds.provenance = Provenance::kFile;
  ds.source = source;
  ds.original_labels = ds.labels;
  ds.corruption_mask.assign(ds.labels.size(), false);
  return ds;
}

LabeledDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema, path.string());
}

std::string to_csv(const LabeledDataset& ds, bool write_header) {
  std::string out;
  const auto d = ds.features.cols();
  if (write_header) {
    for (Eigen::Index j = 0; j < d; ++j) out += "x" + std::to_string(j) + ",";
    out += "label\n";
  }
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      append_double(out, ds.features(i, j));
      out += ',';
    }
    out += std::to_string(ds.labels[static_cast<std::size_t>(i)]);
    out += '\n';
  }
  return out;
}

void save_csv(const LabeledDataset& ds, const std::filesystem::path& path, bool write_header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << to_csv(ds, write_header);
}

// --- splitting --------------------------------------------------------------

LabeledDataset subset(const LabeledDataset& ds, const std::vector<std::size_t>& rows) {
  LabeledDataset out;
  out.class_count = ds.class_count;
  out.provenance = ds.provenance;
  out.source = ds.source;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
  out.labels.reserve(rows.size());
  out.original_labels.reserve(rows.size());
  out.corruption_mask.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(r));
    out.labels.push_back(ds.labels.at(r));
    out.original_labels.push_back(r < ds.original_labels.size() ? ds.original_labels[r] : ds.labels[r]);
    out.corruption_mask.push_back(r < ds.corruption_mask.size() && ds.corruption_mask[r]);
  }
  return out;
}

SplitResult split(const LabeledDataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidInput("train fraction must lie in (0, 1)");
  if (ds.size() < 2) throw InvalidInput("cannot split fewer than 2 samples");

  SplitResult out;
  Rng rng(seed);
  const auto sizes = ds.class_sizes();
  out.stratified = std::all_of(sizes.begin(), sizes.end(), [](std::size_t n) { return n == 0 || n >= 2; });

  if (out.stratified) {
    std::vector<std::vector<std::size_t>> by_class(ds.class_count);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
    for (auto& rows : by_class) {
      if (rows.empty()) continue;
      std::shuffle(rows.begin(), rows.end(), rng);
      const std::size_t n_train = round_clamped(train_fraction * static_cast<double>(rows.size()), 1, rows.size() - 1);
      out.train_indices.insert(out.train_indices.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
      out.eval_indices.insert(out.eval_indices.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
    }
  } else {
    std::vector<std::size_t> rows(ds.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t n_train = round_clamped(train_fraction * static_cast<double>(rows.size()), 1, rows.size() - 1);
    out.train_indices.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.eval_indices.assign(rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.eval_indices.begin(), out.eval_indices.end());
  out.train = subset(ds, out.train_indices);
  out.eval = subset(ds, out.eval_indices);
  return out;
}

}  // namespace mer
