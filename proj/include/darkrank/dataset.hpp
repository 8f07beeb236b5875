#pragma once

// Identity-labelled feature datasets: synthetic generation and the DRKDATA1
// CSV format.
//
//   DRKDATA1,<n>,<d>
//   <identity>,<train|heldout>,<f_1>,...,<f_d>     (n rows)
//
// Features are written in shortest round-trip form, so save/load is exact.

#include "darkrank/errors.hpp"
#include "darkrank/linalg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace darkrank {

enum class Split { train, heldout };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "heldout"; }

struct LabeledDataset {
  Matrix features;
  std::vector<int> identities;
  std::vector<Split> splits;

  std::size_t size() const noexcept { return identities.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(features.cols()); }

  /// Every identity has >= 2 samples and lives in exactly one split.
  void validate() const {
    if (static_cast<std::size_t>(features.rows()) != identities.size() ||
        identities.size() != splits.size()) {
      throw InputError("dataset columns have inconsistent lengths");
    }
    std::map<int, std::pair<Split, std::size_t>> seen;
    for (std::size_t i = 0; i < identities.size(); ++i) {
      auto [it, fresh] = seen.try_emplace(identities[i], splits[i], 0);
      if (!fresh && it->second.first != splits[i]) {
        throw InputError("identity " + std::to_string(identities[i]) +
                         " appears in both train and heldout splits");
      }
      ++it->second.second;
    }
    for (const auto& [id, info] : seen) {
      if (info.second < 2) {
        throw InputError("identity " + std::to_string(id) + " has fewer than 2 samples");
      }
    }
    if (!features.allFinite()) throw InputError("dataset features must be finite");
  }

  friend bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
    return a.features.rows() == b.features.rows() && a.features.cols() == b.features.cols() &&
           a.features == b.features && a.identities == b.identities && a.splits == b.splits;
  }
};

/// Rows of one split, with their original row indices.
struct SplitData {
  Matrix features;
  std::vector<int> identities;
  std::vector<std::size_t> rows;

  std::size_t size() const noexcept { return identities.size(); }
};

inline SplitData select_split(const LabeledDataset& data, Split split) {
  SplitData out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.splits[i] == split) out.rows.push_back(i);
  }
  out.features.resize(static_cast<Eigen::Index>(out.rows.size()), data.features.cols());
  for (std::size_t r = 0; r < out.rows.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) =
        data.features.row(static_cast<Eigen::Index>(out.rows[r]));
    out.identities.push_back(data.identities[out.rows[r]]);
  }
  return out;
}

/// Dense class indices 0..C-1 for the distinct identities, in ascending order.
inline std::map<int, int> class_index(const std::vector<int>& identities) {
  std::map<int, int> out;
  for (int id : std::set<int>(identities.begin(), identities.end())) {
    out.emplace(id, static_cast<int>(out.size()));
  }
  return out;
}

struct SynthSpec {
  std::size_t num_identities = 20;
  std::size_t samples_per_identity = 16;
  std::size_t feature_dim = 32;
  double intra_class_stddev = 0.25;
  double inter_class_separation = 1.0;
  double heldout_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_identities < 2) throw InputError("num_identities must be >= 2");
    if (samples_per_identity < 2) throw InputError("samples_per_identity must be >= 2");
    if (feature_dim < 1) throw InputError("feature_dim must be >= 1");
    if (!(intra_class_stddev > 0.0)) throw InputError("intra_class_stddev must be > 0");
    if (!(inter_class_separation > 0.0)) throw InputError("inter_class_separation must be > 0");
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
      throw InputError("heldout_fraction must lie in (0, 1)");
    }
    const std::size_t h = heldout_identities();
    if (h < 1 || h >= num_identities) {
      throw InputError("heldout_fraction leaves no identities in one of the splits");
    }
  }

  std::size_t heldout_identities() const {
    return static_cast<std::size_t>(
        std::llround(heldout_fraction * static_cast<double>(num_identities)));
  }
};

/// Gaussian clusters around centers drawn uniformly from a hypercube of side
/// inter_class_separation; identities are split disjointly into train/heldout.
inline LabeledDataset generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uniform(-0.5, 0.5);
  std::normal_distribution<double> noise(0.0, spec.intra_class_stddev);

  const auto k = static_cast<Eigen::Index>(spec.num_identities);
  const auto d = static_cast<Eigen::Index>(spec.feature_dim);
  Matrix centers(k, d);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) centers(i, j) = uniform(rng) * spec.inter_class_separation;
  }

  std::vector<std::size_t> ids(spec.num_identities);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<bool> heldout(spec.num_identities, false);
  for (std::size_t i = 0; i < spec.heldout_identities(); ++i) heldout[ids[i]] = true;

  LabeledDataset out;
  const auto n = static_cast<Eigen::Index>(spec.num_identities * spec.samples_per_identity);
  out.features.resize(n, d);
  Eigen::Index row = 0;
  for (Eigen::Index id = 0; id < k; ++id) {
    for (std::size_t s = 0; s < spec.samples_per_identity; ++s, ++row) {
      for (Eigen::Index j = 0; j < d; ++j) out.features(row, j) = centers(id, j) + noise(rng);
      out.identities.push_back(static_cast<int>(id));
      out.splits.push_back(heldout[static_cast<std::size_t>(id)] ? Split::heldout : Split::train);
    }
  }
  return out;
}

inline std::string serialize_dataset(const LabeledDataset& data) {
  data.validate();
  std::string out = "DRKDATA1," + std::to_string(data.size()) + "," + std::to_string(data.dim()) + "\n";
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out += std::to_string(data.identities[i]);
    out += ',';
    out += to_string(data.splits[i]);
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, data.features(static_cast<Eigen::Index>(i), j));
      out += ',';
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

namespace detail {

// Splits a line on commas, recording each field's 1-based starting column.
inline std::vector<std::pair<std::string_view, std::size_t>> split_csv(std::string_view line) {
  std::vector<std::pair<std::string_view, std::size_t>> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    const auto end = comma == std::string_view::npos ? line.size() : comma;
    fields.emplace_back(line.substr(start, end - start), start + 1);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, std::size_t column, const char* what) {
  T value{};
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto res = std::from_chars(first, last, value);
  if (field.empty() || res.ec != std::errc() || res.ptr != last) {
    throw ParseError("invalid " + std::string(what) + " '" + std::string(field) + "'", line, column);
  }
  return value;
}

}  // namespace detail

/// Parses a DRKDATA1 document; throws ParseError without returning partial data.
inline LabeledDataset parse_dataset(std::string_view text) {
  if (text.empty()) throw ParseError("empty dataset file", 1, 1);
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    const auto nl = text.find('\n', pos);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view line;
  next_line(line);
  const auto header = detail::split_csv(line);
  if (header.size() != 3 || header[0].first != "DRKDATA1") {
    throw ParseError("expected header 'DRKDATA1,n,d'", 1, 1);
  }
  const auto n = detail::parse_number<std::size_t>(header[1].first, 1, header[1].second, "row count");
  const auto d = detail::parse_number<std::size_t>(header[2].first, 1, header[2].second, "dimension");
  if (d < 1) throw ParseError("dimension must be >= 1", 1, header[2].second);

  LabeledDataset out;
  out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  out.identities.reserve(n);
  out.splits.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (!next_line(line)) {
      throw ParseError("truncated file: expected " + std::to_string(n) + " rows, found " +
                           std::to_string(r), line_no + 1, 1);
    }
    const auto fields = detail::split_csv(line);
    if (fields.size() != d + 2) {
      throw ParseError("expected " + std::to_string(d + 2) + " fields, found " +
                           std::to_string(fields.size()), line_no, 1);
    }
    out.identities.push_back(
        detail::parse_number<int>(fields[0].first, line_no, fields[0].second, "identity"));
    if (fields[1].first == "train") {
      out.splits.push_back(Split::train);
    } else if (fields[1].first == "heldout") {
      out.splits.push_back(Split::heldout);
    } else {
      throw ParseError("unknown split tag '" + std::string(fields[1].first) + "'", line_no,
                       fields[1].second);
    }
    for (std::size_t j = 0; j < d; ++j) {
      const auto& [field, col] = fields[j + 2];
      const double v = detail::parse_number<double>(field, line_no, col, "feature");
      if (!std::isfinite(v)) throw ParseError("non-finite feature", line_no, col);
      out.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
    }
  }
  while (next_line(line)) {
    if (!line.empty()) throw ParseError("unexpected data after " + std::to_string(n) + " rows", line_no, 1);
  }
  try {
    out.validate();
  } catch (const InputError& e) {
    throw ParseError(e.what(), line_no, 1);
  }
  return out;
}

inline void save_dataset(const LabeledDataset& data, const std::filesystem::path& path) {
  const std::string text = serialize_dataset(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace darkrank
