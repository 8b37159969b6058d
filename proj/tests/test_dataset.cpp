#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "cdm/classical.hpp"
#include "cdm/dataset.hpp"

using namespace cdm;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace

TEST_CASE("manifest round trip preserves every field") {
  const std::string path = temp_path("manifest_rt.csv");
  std::vector<PairRecord> recs;
  for (int i = 0; i < 5; ++i) {
    PairRecord r;
    r.ref_path = "ref_" + std::to_string(i) + ".png";
    r.test_path = "test_" + std::to_string(i) + ".png";
    r.delta_v = 0.5 * i;
    r.aligned = i % 2 == 0;
    r.content_id = "scene" + std::to_string(i / 2);
    recs.push_back(r);
  }
  save_manifest(path, recs);
  const auto back = load_manifest(path);
  REQUIRE(back.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].ref_path == recs[i].ref_path);
    CHECK(back[i].test_path == recs[i].test_path);
    CHECK(back[i].delta_v == Catch::Approx(recs[i].delta_v).margin(1e-6));
    CHECK(back[i].aligned == recs[i].aligned);
    CHECK(back[i].content_id == recs[i].content_id);
  }
  std::remove(path.c_str());
}

TEST_CASE("manifest validation failures carry row context") {
  const std::string path = temp_path("manifest_bad.csv");
  write_file(path, "ref_path,test_path,delta_v,aligned,content_id\n"
                   "a.png,b.png,-1.0,1,c1\n");
  CHECK_THROWS_WITH(load_manifest(path),
                    Catch::Matchers::ContainsSubstring("row 2"));
  write_file(path, "ref_path,test_path,delta_v,aligned,content_id\n"
                   "a.png,b.png,1.0,1,\n");
  CHECK_THROWS_AS(load_manifest(path), ConfigError);
  write_file(path, "ref_path,test_path,delta_v\na.png,b.png,1.0\n");
  CHECK_THROWS_AS(load_manifest(path), ConfigError);
  write_file(path, "ref_path,test_path,delta_v,aligned,content_id\n"
                   "missing_a.png,missing_b.png,1.0,1,c1\n");
  CHECK_THROWS_AS(load_manifest(path, /*check_files=*/true), IoError);
  std::remove(path.c_str());
}

TEST_CASE("all-grade-2 ratings average to the calibrated value") {
  RawRatings ratings;
  for (int pair = 0; pair < 4; ++pair)
    for (int subj = 0; subj < 10; ++subj)
      ratings["p" + std::to_string(pair)].push_back(
          {"s" + std::to_string(subj), 2.0});
  const ScoreResult res = process_raw_scores(ratings);
  CHECK(res.outlier_ratings == 0);
  for (const auto& [id, dv] : res.delta_v)
    CHECK(dv == Catch::Approx(3.42).margin(0.005));
}

TEST_CASE("a wild rating is flagged and its subject can be rejected") {
  RawRatings ratings;
  // 20 pairs: subject "bad" gives grade 4 while 11 others give ~1.
  for (int pair = 0; pair < 20; ++pair) {
    auto& v = ratings["p" + std::to_string(pair)];
    for (int subj = 0; subj < 11; ++subj)
      v.push_back({"s" + std::to_string(subj), 1.0 + 0.02 * (subj % 3)});
    v.push_back({"bad", 4.0});
  }
  const ScoreResult res = process_raw_scores(ratings);
  CHECK(res.outlier_ratings == 20);
  bool found = false;
  for (const auto& s : res.subjects)
    if (s.subject_id == "bad") {
      found = true;
      CHECK(s.outlier_count == 20);
      CHECK(s.rejected);
    }
  CHECK(found);
  // Purified means exclude the wild ratings entirely.
  for (const auto& [id, dv] : res.delta_v)
    CHECK(dv < grade_to_delta_v(1.1));
}

TEST_CASE("a rare outlier does not reject an otherwise consistent subject") {
  RawRatings ratings;
  for (int pair = 0; pair < 40; ++pair) {
    auto& v = ratings["p" + std::to_string(pair)];
    for (int subj = 0; subj < 11; ++subj)
      v.push_back({"s" + std::to_string(subj), 1.0 + 0.02 * (subj % 3)});
    // Subject "mostly_ok" slips once in 40 pairs: 2.5% < 5%.
    v.push_back({"mostly_ok", pair == 0 ? 4.0 : 1.01});
  }
  const ScoreResult res = process_raw_scores(ratings);
  for (const auto& s : res.subjects)
    if (s.subject_id == "mostly_ok") {
      CHECK(s.outlier_count == 1);
      CHECK_FALSE(s.rejected);
    }
}

TEST_CASE("ratings with fewer than two grades per pair are rejected") {
  RawRatings ratings;
  ratings["p0"].push_back({"s0", 2.0});
  CHECK_THROWS_AS(process_raw_scores(ratings), ConfigError);
}

TEST_CASE("ratings loader validates schema and grade range") {
  const std::string path = temp_path("ratings_bad.csv");
  write_file(path, "pair_id,subject_id,grade\np0,s0,4.5\n");
  CHECK_THROWS_AS(load_raw_ratings(path), ConfigError);
  write_file(path, "pair_id,grade\np0,2\n");
  CHECK_THROWS_AS(load_raw_ratings(path), ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("content-independent split never shares a content across splits") {
  std::vector<PairRecord> recs;
  for (int content = 0; content < 10; ++content)
    for (int v = 0; v < 4; ++v) {
      PairRecord r;
      r.content_id = "c" + std::to_string(content);
      r.delta_v = 1.0;
      recs.push_back(r);
    }
  split_content_independent(recs, {}, 5);
  std::map<std::string, std::set<Split>> seen;
  int n_train = 0, n_val = 0, n_test = 0;
  for (const auto& r : recs) {
    seen[r.content_id].insert(r.split);
    n_train += r.split == Split::Train;
    n_val += r.split == Split::Val;
    n_test += r.split == Split::Test;
  }
  for (const auto& [id, splits] : seen) CHECK(splits.size() == 1);
  // 10 contents at 0.7/0.1/0.2 -> 7/1/2 contents -> 28/4/8 pairs.
  CHECK(n_train == 28);
  CHECK(n_val == 4);
  CHECK(n_test == 8);
}

TEST_CASE("split is deterministic per seed and varies across seeds") {
  auto make = [] {
    std::vector<PairRecord> recs;
    for (int content = 0; content < 12; ++content) {
      PairRecord r;
      r.content_id = "c" + std::to_string(content);
      recs.push_back(r);
    }
    return recs;
  };
  auto a = make(), b = make(), c = make();
  split_content_independent(a, {}, 1);
  split_content_independent(b, {}, 1);
  split_content_independent(c, {}, 2);
  bool same_ab = true, same_ac = true;
  for (size_t i = 0; i < a.size(); ++i) {
    same_ab = same_ab && a[i].split == b[i].split;
    same_ac = same_ac && a[i].split == c[i].split;
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);
}

TEST_CASE("split rejects bad fractions and too few contents") {
  std::vector<PairRecord> recs(4);
  for (int i = 0; i < 4; ++i) recs[i].content_id = "c" + std::to_string(i);
  SplitFractions bad{0.5, 0.1, 0.1};
  CHECK_THROWS_AS(split_content_independent(recs, bad, 0), ConfigError);
  std::vector<PairRecord> two(2);
  two[0].content_id = "a";
  two[1].content_id = "b";
  CHECK_THROWS_AS(split_content_independent(two, {}, 0), ConfigError);
}

TEST_CASE("crop sampling shares one offset across the pair") {
  // Encode coordinates in pixel values; matching values in both crops
  // prove the offsets are identical.
  ImageBuf a(10, 12, 3), b(10, 12, 3);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 12; ++x)
      for (int c = 0; c < 3; ++c) {
        a.at(y, x, c) = static_cast<float>(y * 100 + x);
        b.at(y, x, c) = static_cast<float>(y * 100 + x) + 0.5f;
      }
  std::mt19937 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto [ca, cb] = sample_crop(a, b, 4, rng);
    REQUIRE(ca.height == 4);
    REQUIRE(ca.width == 4);
    for (size_t i = 0; i < ca.size(); ++i)
      CHECK(cb.data[i] - ca.data[i] == 0.5f);
    // Crop content is contiguous in the source frame.
    CHECK(ca.at(1, 0, 0) - ca.at(0, 0, 0) == 100.0f);
    CHECK(ca.at(0, 1, 0) - ca.at(0, 0, 0) == 1.0f);
  }
  CHECK_THROWS_AS(sample_crop(a, b, 11, rng), DimensionError);
  ImageBuf c(9, 12, 3);
  CHECK_THROWS_AS(sample_crop(a, c, 4, rng), DimensionError);
}

TEST_CASE("patch set parsing and rendering") {
  const std::string path = temp_path("patch_set.csv");
  write_file(path,
             "pair_id,space,c1_1,c1_2,c1_3,c2_1,c2_2,c2_3,delta_v\n"
             "p1,lab,50,10,-10,52,12,-8,1.5\n"
             "p2,xyz,41.24,21.26,1.93,35,20,5,2.0\n");
  const auto patches = load_patch_set(path);
  REQUIRE(patches.size() == 2);
  CHECK(patches[0].is_lab);
  CHECK_FALSE(patches[1].is_lab);
  CHECK(patches[0].delta_v == 1.5);

  long clipped = 0;
  auto [pa, pb] = render_patch_pair(patches[0], 16, &clipped);
  CHECK(pa.height == 16);
  CHECK(pa.width == 16);
  // Constant patch: every pixel equals the first.
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        CHECK(pa.at(y, x, c) == pa.at(0, 0, c));
  // Round trip through rendering: the patch color is the requested Lab.
  const LabColor back =
      srgb_to_lab({pa.at(0, 0, 0), pa.at(0, 0, 1), pa.at(0, 0, 2)});
  CHECK(back.l == Catch::Approx(50).margin(1e-3));
  CHECK(back.a == Catch::Approx(10).margin(1e-3));
  CHECK(back.b == Catch::Approx(-10).margin(1e-3));

  // Out-of-gamut Lab color reports clipping.
  PatchPairRecord wild = patches[0];
  wild.c1[1] = 150.0;
  long wild_clips = 0;
  render_patch_pair(wild, 8, &wild_clips);
  CHECK(wild_clips > 0);
  std::remove(path.c_str());
}

TEST_CASE("patch set schema errors") {
  const std::string path = temp_path("patch_bad.csv");
  write_file(path, "pair_id,space,c1_1,c1_2,c1_3,c2_1,c2_2,c2_3,delta_v\n"
                   "p1,hsv,1,2,3,4,5,6,1\n");
  CHECK_THROWS_AS(load_patch_set(path), ConfigError);
  write_file(path, "pair_id,space,c1_1\np1,lab,1\n");
  CHECK_THROWS_AS(load_patch_set(path), ConfigError);
  std::remove(path.c_str());
}
