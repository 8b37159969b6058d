#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cdm/colorspace.hpp"
#include "cdm/csv.hpp"
#include "cdm/errors.hpp"
#include "cdm/image.hpp"

namespace cdm {

enum class Split { Unassigned, Train, Val, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    default: return "unassigned";
  }
}

// One annotated image pair.
struct PairRecord {
  std::string ref_path, test_path;
  double delta_v = 0.0;
  bool aligned = true;
  std::string content_id;
  Split split = Split::Unassigned;
};

// Manifest CSV schema: ref_path,test_path,delta_v,aligned,content_id.
// `aligned` is 0/1. When check_files is set, missing image files are
// reported with their row numbers.
inline std::vector<PairRecord> load_manifest(const std::string& path,
                                             bool check_files = false) {
  const csv::Table t = csv::read_file(path);
  const int c_ref = t.column("ref_path");
  const int c_test = t.column("test_path");
  const int c_dv = t.column("delta_v");
  const int c_al = t.column("aligned");
  const int c_cid = t.column("content_id");
  if (c_ref < 0 || c_test < 0 || c_dv < 0 || c_al < 0 || c_cid < 0)
    throw ConfigError(path +
                      ": manifest must have columns "
                      "ref_path,test_path,delta_v,aligned,content_id");
  std::vector<PairRecord> out;
  std::string missing;
  for (size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string ctx = path + " row " + std::to_string(i + 2);
    PairRecord r;
    r.ref_path = row[c_ref];
    r.test_path = row[c_test];
    r.delta_v = csv::parse_double(row[c_dv], ctx);
    if (r.delta_v < 0)
      throw ConfigError(ctx + ": delta_v must be nonnegative, got " +
                        row[c_dv]);
    r.aligned = row[c_al] != "0";
    r.content_id = row[c_cid];
    if (r.content_id.empty())
      throw ConfigError(ctx + ": content_id must be nonempty");
    if (check_files) {
      for (const auto& p : {r.ref_path, r.test_path})
        if (!std::filesystem::exists(p))
          missing += ctx + ": missing image file " + p + "\n";
    }
    out.push_back(std::move(r));
  }
  if (!missing.empty()) throw IoError(missing);
  return out;
}

inline void save_manifest(const std::string& path,
                          const std::vector<PairRecord>& records) {
  std::ofstream out(path + ".tmp");
  if (!out) throw IoError("cannot open " + path + ".tmp");
  out << "ref_path,test_path,delta_v,aligned,content_id\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.6f", r.delta_v);
    out << csv::quote_if_needed(r.ref_path) << ','
        << csv::quote_if_needed(r.test_path) << ',' << buf << ','
        << (r.aligned ? 1 : 0) << ',' << csv::quote_if_needed(r.content_id)
        << '\n';
  }
  out.close();
  if (!out) throw IoError("short write to " + path);
  if (std::rename((path + ".tmp").c_str(), path.c_str()) != 0)
    throw IoError("cannot rename " + path + ".tmp");
}

// ---------------------------------------------------------------------------
// Raw subjective scores.

struct Rating {
  std::string subject_id;
  double grade = 0.0;  // continuous, [0,4]
};

// Raw-ratings CSV schema: pair_id,subject_id,grade.
using RawRatings = std::map<std::string, std::vector<Rating>>;

inline RawRatings load_raw_ratings(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const int c_pair = t.column("pair_id");
  const int c_subj = t.column("subject_id");
  const int c_grade = t.column("grade");
  if (c_pair < 0 || c_subj < 0 || c_grade < 0)
    throw ConfigError(path +
                      ": ratings file must have columns "
                      "pair_id,subject_id,grade");
  RawRatings out;
  for (size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string ctx = path + " row " + std::to_string(i + 2);
    const double g = csv::parse_double(row[c_grade], ctx);
    if (g < 0.0 || g > 4.0)
      throw ConfigError(ctx + ": grade out of range [0,4]: " + row[c_grade]);
    out[row[c_pair]].push_back({row[c_subj], g});
  }
  return out;
}

struct SubjectReport {
  std::string subject_id;
  long outlier_count = 0;
  long total_count = 0;
  bool rejected = false;  // outlier rate > 5%
};

struct ScoreResult {
  std::map<std::string, double> delta_v;  // per pair_id
  std::vector<SubjectReport> subjects;
  long outlier_ratings = 0;
};

// Converts grades to perceptual CDs via the calibration curve, flags
// ratings outside mean +/- 3 sigma of their pair (sample std, n-1
// denominator, single pass), rejects subjects whose outlier rate exceeds
// 5% and drops all their ratings, then averages the survivors per pair.
inline ScoreResult process_raw_scores(const RawRatings& ratings) {
  struct Converted {
    std::string subject_id;
    double dv;
    bool outlier = false;
  };
  std::map<std::string, std::vector<Converted>> per_pair;
  for (const auto& [pair_id, rs] : ratings) {
    if (rs.size() < 2)
      throw ConfigError("pair " + pair_id + " has fewer than 2 ratings");
    auto& conv = per_pair[pair_id];
    for (const auto& r : rs)
      conv.push_back({r.subject_id, grade_to_delta_v(r.grade)});
  }

  ScoreResult res;
  std::map<std::string, SubjectReport> subjects;
  for (auto& [pair_id, conv] : per_pair) {
    const size_t n = conv.size();
    double mean = 0.0;
    for (const auto& c : conv) mean += c.dv;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& c : conv) var += (c.dv - mean) * (c.dv - mean);
    const double sigma = std::sqrt(var / static_cast<double>(n - 1));
    for (auto& c : conv) {
      auto& rep = subjects[c.subject_id];
      rep.subject_id = c.subject_id;
      ++rep.total_count;
      if (sigma > 0.0 && std::abs(c.dv - mean) > 3.0 * sigma) {
        c.outlier = true;
        ++rep.outlier_count;
        ++res.outlier_ratings;
      }
    }
  }
  std::set<std::string> rejected;
  for (auto& [id, rep] : subjects) {
    rep.rejected = rep.outlier_count > 0.05 * rep.total_count;
    if (rep.rejected) rejected.insert(id);
    res.subjects.push_back(rep);
  }
  for (const auto& [pair_id, conv] : per_pair) {
    double sum = 0.0;
    long kept = 0;
    for (const auto& c : conv)
      if (!c.outlier && !rejected.count(c.subject_id)) {
        sum += c.dv;
        ++kept;
      }
    if (kept == 0)
      throw ConfigError("pair " + pair_id +
                        " has no valid ratings after purification");
    res.delta_v[pair_id] = sum / static_cast<double>(kept);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Content-independent splitting.

struct SplitFractions {
  double train = 0.7, val = 0.1, test = 0.2;
};

// Shuffles content ids by seed and partitions them so no content id spans
// two splits; fractions apply to content ids. Deterministic per seed.
inline void split_content_independent(std::vector<PairRecord>& records,
                                      const SplitFractions& f, unsigned seed) {
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  std::vector<std::string> contents;
  for (const auto& r : records)
    if (std::find(contents.begin(), contents.end(), r.content_id) ==
        contents.end())
      contents.push_back(r.content_id);
  if (contents.size() < 3)
    throw ConfigError("need at least 3 content ids to make 3 splits, have " +
                      std::to_string(contents.size()));
  std::sort(contents.begin(), contents.end());
  std::mt19937 rng(seed);
  std::shuffle(contents.begin(), contents.end(), rng);

  const size_t n = contents.size();
  size_t n_train = static_cast<size_t>(std::round(f.train * n));
  size_t n_val = static_cast<size_t>(std::round(f.val * n));
  n_train = std::clamp<size_t>(n_train, 1, n - 2);
  n_val = std::clamp<size_t>(n_val, 1, n - n_train - 1);
  std::map<std::string, Split> assign;
  for (size_t i = 0; i < n; ++i)
    assign[contents[i]] = i < n_train            ? Split::Train
                          : i < n_train + n_val ? Split::Val
                                                : Split::Test;
  for (auto& r : records) r.split = assign[r.content_id];
}

// ---------------------------------------------------------------------------
// Crop sampling.

// One random top-left offset shared by both images of the pair; a
// per-image offset would manufacture CD.
inline std::pair<ImageBuf, ImageBuf> sample_crop(const ImageBuf& a,
                                                 const ImageBuf& b, int size,
                                                 std::mt19937& rng) {
  if (!a.same_dims(b))
    throw DimensionError("sample_crop: pair dimensions differ");
  if (a.height < size || a.width < size)
    throw DimensionError("sample_crop: image " + std::to_string(a.width) +
                         "x" + std::to_string(a.height) +
                         " smaller than crop " + std::to_string(size));
  std::uniform_int_distribution<int> dy(0, a.height - size);
  std::uniform_int_distribution<int> dx(0, a.width - size);
  const int oy = dy(rng);
  const int ox = dx(rng);
  ImageBuf ca(size, size, a.channels), cb(size, size, a.channels);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < a.channels; ++c) {
        ca.at(y, x, c) = a.at(oy + y, ox + x, c);
        cb.at(y, x, c) = b.at(oy + y, ox + x, c);
      }
  return {std::move(ca), std::move(cb)};
}

// ---------------------------------------------------------------------------
// Homogeneous patch rendering for color-pair datasets.

// Renders a color (given in XYZ or Lab) as a constant sRGB patch.
// Out-of-gamut channels are clipped to [0,1]; the clip count is surfaced
// through `clipped`.
inline ImageBuf render_patch(const LabColor& c, int size = 128,
                             long* clipped = nullptr,
                             const WhitePoint& w = d65_white()) {
  return constant_image(size, size, lab_to_srgb(c, w, clipped));
}

inline ImageBuf render_patch(const XyzColor& c, int size = 128,
                             long* clipped = nullptr,
                             const WhitePoint& w = d65_white()) {
  return render_patch(xyz_to_lab(c, w), size, clipped, w);
}

struct PatchPairRecord {
  std::string pair_id;
  bool is_lab = false;  // coordinate-space tag: xyz | lab
  double c1[3], c2[3];
  double delta_v = 0.0;
};

// Patch-set CSV schema:
// pair_id,space,c1_1,c1_2,c1_3,c2_1,c2_2,c2_3,delta_v with space one of
// xyz|lab.
inline std::vector<PatchPairRecord> load_patch_set(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const char* cols[] = {"pair_id", "space", "c1_1", "c1_2", "c1_3",
                        "c2_1",    "c2_2",  "c2_3", "delta_v"};
  int idx[9];
  for (int i = 0; i < 9; ++i) {
    idx[i] = t.column(cols[i]);
    if (idx[i] < 0)
      throw ConfigError(path + ": patch set is missing column " +
                        std::string(cols[i]));
  }
  std::vector<PatchPairRecord> out;
  for (size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string ctx = path + " row " + std::to_string(i + 2);
    PatchPairRecord r;
    r.pair_id = row[idx[0]];
    if (row[idx[1]] == "lab") r.is_lab = true;
    else if (row[idx[1]] == "xyz") r.is_lab = false;
    else
      throw ConfigError(ctx + ": space must be xyz or lab, got " +
                        row[idx[1]]);
    for (int k = 0; k < 3; ++k) {
      r.c1[k] = csv::parse_double(row[idx[2 + k]], ctx);
      r.c2[k] = csv::parse_double(row[idx[5 + k]], ctx);
    }
    r.delta_v = csv::parse_double(row[idx[8]], ctx);
    out.push_back(r);
  }
  return out;
}

inline std::pair<ImageBuf, ImageBuf> render_patch_pair(
    const PatchPairRecord& r, int size = 128, long* clipped = nullptr) {
  auto render = [&](const double* c) {
    if (r.is_lab) return render_patch(LabColor{c[0], c[1], c[2]}, size, clipped);
    return render_patch(XyzColor{c[0], c[1], c[2]}, size, clipped);
  };
  return {render(r.c1), render(r.c2)};
}

}  // namespace cdm
