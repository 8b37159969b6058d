// Command-line front end: pairwise color-difference computation, CD-map
// emission, model training, evaluation, dataset preparation, and
// metric-property probes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cdm/checkpoint.hpp"
#include "cdm/classical.hpp"
#include "cdm/dataset.hpp"
#include "cdm/evaluator.hpp"
#include "cdm/probes.hpp"
#include "cdm/scielab.hpp"
#include "cdm/trainer.hpp"

namespace {

struct MetricChoice {
  std::string selector;
  cdm::ImageMetric metric;
  bool is_cdnet = false;
  cdm::CdNetParams<float> cdnet_params;
};

// Resolves de76|cie94|cmc|ciede2000|scielab|cdnet:<checkpoint> into a
// callable image-pair metric. Throws ConfigError for unknown selectors so
// resolution fails before any work begins.
MetricChoice resolve_metric(const std::string& selector, double scielab_ppd) {
  MetricChoice out;
  out.selector = selector;
  auto formula_metric = [](cdm::CdFormula f,
                           std::optional<cdm::ScielabConfig> spatial) {
    return [f, spatial](const cdm::ImageBuf& a, const cdm::ImageBuf& b) {
      return cdm::image_cd(a, b, f, spatial).mean;
    };
  };
  using Kind = cdm::CdFormula::Kind;
  if (selector == "de76") {
    out.metric = formula_metric({.kind = Kind::DE76}, std::nullopt);
  } else if (selector == "cie94") {
    out.metric = formula_metric({.kind = Kind::CIE94}, std::nullopt);
  } else if (selector == "cmc") {
    out.metric = formula_metric({.kind = Kind::CMC}, std::nullopt);
  } else if (selector == "ciede2000") {
    out.metric = formula_metric({.kind = Kind::CIEDE2000}, std::nullopt);
  } else if (selector == "scielab") {
    cdm::ScielabConfig cfg;
    cfg.pixels_per_degree = scielab_ppd;
    out.metric = formula_metric({.kind = Kind::CIEDE2000}, cfg);
  } else if (selector.rfind("cdnet:", 0) == 0) {
    const std::string path = selector.substr(6);
    if (path.empty())
      throw cdm::ConfigError("cdnet metric needs a checkpoint path "
                             "(cdnet:<checkpoint>)");
    out.is_cdnet = true;
    out.cdnet_params = cdm::load_checkpoint(path).params;
    const auto params = out.cdnet_params;
    out.metric = [params](const cdm::ImageBuf& a, const cdm::ImageBuf& b) {
      return cdm::cdnet_overall_cd(a, b, params).mean;
    };
  } else {
    throw cdm::ConfigError(
        "unknown metric '" + selector +
        "'; expected de76|cie94|cmc|ciede2000|scielab|cdnet:<checkpoint>");
  }
  return out;
}

cdm::CdMap metric_map(const MetricChoice& m, const cdm::ImageBuf& a,
                      const cdm::ImageBuf& b, double scielab_ppd) {
  using Kind = cdm::CdFormula::Kind;
  if (m.is_cdnet) return cdm::cdnet_overall_cd(a, b, m.cdnet_params);
  cdm::CdFormula f;
  std::optional<cdm::ScielabConfig> spatial;
  if (m.selector == "de76") f.kind = Kind::DE76;
  else if (m.selector == "cie94") f.kind = Kind::CIE94;
  else if (m.selector == "cmc") f.kind = Kind::CMC;
  else if (m.selector == "ciede2000") f.kind = Kind::CIEDE2000;
  else if (m.selector == "scielab") {
    f.kind = Kind::CIEDE2000;
    spatial = cdm::ScielabConfig{};
    spatial->pixels_per_degree = scielab_ppd;
  }
  return cdm::image_cd(a, b, f, spatial);
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  std::ofstream out(tmp);
  if (!out) throw cdm::IoError("cannot open " + tmp + " for writing");
  out << content;
  out.close();
  if (!out) throw cdm::IoError("short write to " + tmp);
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw cdm::IoError("cannot rename " + tmp + " to " + path);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

cdm::PairMetric pair_metric_from(const cdm::ImageMetric& metric) {
  auto provider = cdm::file_image_provider();
  return [metric, provider](const cdm::PairRecord& r) {
    auto [a, b] = provider(r);
    return metric(a, b);
  };
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Perceptual color-difference toolkit"};
  app.require_subcommand(1);
  unsigned seed = 0;
  app.add_option("--seed", seed, "Seed for all randomness")
      ->capture_default_str();

  // --- cd -----------------------------------------------------------------
  auto* cd = app.add_subcommand("cd", "Scalar CD between two images");
  std::string cd_a, cd_b, cd_metric = "ciede2000", cd_map_out;
  double cd_ppd = 90.5;
  cd->add_option("ref", cd_a, "Reference image (PNG)")->required();
  cd->add_option("test", cd_b, "Test image (PNG)")->required();
  cd->add_option("--metric", cd_metric,
                 "de76|cie94|cmc|ciede2000|scielab|cdnet:<checkpoint>")
      ->capture_default_str();
  cd->add_option("--ppd", cd_ppd, "Pixels per degree for scielab")
      ->capture_default_str();
  cd->add_option("--map-out", cd_map_out, "Also write the CD map as PNG");

  // --- map ----------------------------------------------------------------
  auto* mp = app.add_subcommand("map", "Per-pixel CD map as grayscale PNG");
  std::string mp_a, mp_b, mp_out, mp_metric = "ciede2000",
                                  mp_normalize = "ceiling";
  double mp_ceiling = 10.0, mp_ppd = 90.5;
  mp->add_option("ref", mp_a, "Reference image (PNG)")->required();
  mp->add_option("test", mp_b, "Test image (PNG)")->required();
  mp->add_option("out", mp_out, "Output PNG path")->required();
  mp->add_option("--metric", mp_metric,
                 "de76|cie94|cmc|ciede2000|scielab|cdnet:<checkpoint>")
      ->capture_default_str();
  mp->add_option("--ceiling", mp_ceiling,
                 "CD value mapped to white (fixed-scale mode)")
      ->capture_default_str();
  mp->add_option("--normalize", mp_normalize,
                 "ceiling (comparable across pairs) or per-map")
      ->check(CLI::IsMember({"ceiling", "per-map"}))
      ->capture_default_str();
  mp->add_option("--ppd", mp_ppd, "Pixels per degree for scielab")
      ->capture_default_str();

  // --- train --------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train the neural CD model");
  std::string tr_manifest, tr_out = ".";
  cdm::TrainConfig tc;
  bool tr_presplit = false;
  tr->add_option("--manifest", tr_manifest, "Pair manifest CSV")->required();
  tr->add_option("--out", tr_out, "Output directory")->capture_default_str();
  tr->add_option("--lr", tc.learning_rate, "Learning rate")
      ->capture_default_str();
  tr->add_option("--batch", tc.batch_size, "Batch size")
      ->capture_default_str();
  tr->add_option("--epochs", tc.epochs, "Training epochs")
      ->capture_default_str();
  tr->add_option("--lr-halving-period", tc.lr_halving_period,
                 "Halve the learning rate every this many epochs")
      ->capture_default_str();
  tr->add_option("--crop", tc.crop, "Square training crop size")
      ->capture_default_str();
  tr->add_flag("--mae", tc.use_mae, "Mean absolute error loss instead of MSE");
  tr->add_option("--early-stop-train", tc.early_stop_train_stress,
                 "Stop when training STRESS falls below this (0 = off)")
      ->capture_default_str();
  tr->add_option("--early-stop-val", tc.early_stop_val_stress,
                 "Stop when validation STRESS falls below this (0 = off)")
      ->capture_default_str();

  // --- eval ---------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Correlation statistics on a manifest");
  std::string ev_manifest, ev_metrics = "ciede2000", ev_out;
  double ev_ppd = 90.5;
  ev->add_option("--manifest", ev_manifest, "Pair manifest CSV")->required();
  ev->add_option("--metrics", ev_metrics, "Comma-separated metric selectors")
      ->capture_default_str();
  ev->add_option("--out", ev_out, "Report CSV path (otherwise stdout table)");
  ev->add_option("--ppd", ev_ppd, "Pixels per degree for scielab")
      ->capture_default_str();

  // --- prep ---------------------------------------------------------------
  auto* pr = app.add_subcommand(
      "prep", "Raw subjective ratings -> purified manifest with CD targets");
  std::string pr_ratings, pr_pairs, pr_out, pr_subjects;
  pr->add_option("--ratings", pr_ratings,
                 "Raw ratings CSV (pair_id,subject_id,grade)")
      ->required();
  pr->add_option("--pairs", pr_pairs,
                 "Pair table CSV (pair_id,ref_path,test_path,aligned,"
                 "content_id)")
      ->required();
  pr->add_option("--out", pr_out, "Output manifest CSV")->required();
  pr->add_option("--subject-report", pr_subjects,
                 "Optional per-subject screening report CSV");

  // --- probe --------------------------------------------------------------
  auto* pb = app.add_subcommand("probe", "Metric-property probes");
  pb->require_subcommand(1);

  auto* pb_tri = pb->add_subcommand(
      "triangle", "Sample same-content triplets for triangle violations");
  std::string tri_manifest, tri_metric = "ciede2000", tri_out;
  long tri_samples = 100000;
  double tri_tol = 1e-6, tri_ppd = 90.5;
  pb_tri->add_option("--manifest", tri_manifest, "Pair manifest CSV")
      ->required();
  pb_tri->add_option("--metric", tri_metric, "Metric selector")
      ->capture_default_str();
  pb_tri->add_option("--samples", tri_samples, "Triplet count")
      ->capture_default_str();
  pb_tri->add_option("--tolerance", tri_tol, "Violation tolerance")
      ->capture_default_str();
  pb_tri->add_option("--ppd", tri_ppd, "Pixels per degree for scielab")
      ->capture_default_str();
  pb_tri->add_option("--out", tri_out, "Report CSV path");

  auto* pb_ax = pb->add_subcommand(
      "axioms", "Random pairs checked for nonnegativity/symmetry/identity");
  std::string ax_metric = "ciede2000", ax_out;
  long ax_count = 10000;
  int ax_size = 16;
  double ax_tol = 1e-6, ax_ppd = 90.5;
  pb_ax->add_option("--metric", ax_metric, "Metric selector")
      ->capture_default_str();
  pb_ax->add_option("--count", ax_count, "Pairs to sample")
      ->capture_default_str();
  pb_ax->add_option("--size", ax_size, "Random image side length")
      ->capture_default_str();
  pb_ax->add_option("--tolerance", ax_tol, "Failure tolerance")
      ->capture_default_str();
  pb_ax->add_option("--ppd", ax_ppd, "Pixels per degree for scielab")
      ->capture_default_str();
  pb_ax->add_option("--out", ax_out, "Report CSV path");

  auto* pb_rec = pb->add_subcommand(
      "recover", "Gradient-recover the reference from an initialization");
  std::string rec_ref, rec_init, rec_metric = "de76", rec_out, rec_traj;
  double rec_noise = 0.1;
  cdm::RecoveryConfig rc;
  pb_rec->add_option("--reference", rec_ref, "Reference image (PNG)")
      ->required();
  pb_rec->add_option("--init", rec_init,
                     "Initialization PNG (default: reference + noise)");
  pb_rec->add_option("--noise", rec_noise,
                     "Gaussian noise sigma for default initialization")
      ->capture_default_str();
  pb_rec->add_option("--metric", rec_metric, "de76 or cdnet:<checkpoint>")
      ->capture_default_str();
  pb_rec->add_option("--steps", rc.steps, "Optimization steps")
      ->capture_default_str();
  pb_rec->add_option("--step-size", rc.step_size, "Initial step size")
      ->capture_default_str();
  pb_rec->add_option("--out", rec_out, "Recovered image PNG")->required();
  pb_rec->add_option("--trajectory", rec_traj, "Per-step CD trajectory CSV");

  // --- patch-eval ---------------------------------------------------------
  auto* pe = app.add_subcommand(
      "patch-eval", "Evaluate metrics on homogeneous color-patch pairs");
  std::string pe_patches, pe_metrics = "ciede2000", pe_out;
  int pe_size = 128;
  double pe_ppd = 90.5;
  pe->add_option("--patches", pe_patches,
                 "Patch-set CSV (pair_id,space,c1_*,c2_*,delta_v)")
      ->required();
  pe->add_option("--metrics", pe_metrics, "Comma-separated metric selectors")
      ->capture_default_str();
  pe->add_option("--size", pe_size, "Rendered patch side length")
      ->capture_default_str();
  pe->add_option("--ppd", pe_ppd, "Pixels per degree for scielab")
      ->capture_default_str();
  pe->add_option("--out", pe_out, "Report CSV path (otherwise stdout table)");

  CLI11_PARSE(app, argc, argv);

  if (*cd) {
    const MetricChoice m = resolve_metric(cd_metric, cd_ppd);
    const cdm::ImageBuf a = cdm::read_png(cd_a);
    const cdm::ImageBuf b = cdm::read_png(cd_b);
    if (cd_map_out.empty()) {
      std::printf("%.4f\n", m.metric(a, b));
    } else {
      const cdm::CdMap map = metric_map(m, a, b, cd_ppd);
      std::printf("%.4f\n", map.mean);
      cdm::ImageBuf gray = map.values;
      for (auto& v : gray.data)
        v = std::clamp(v / 10.0f, 0.0f, 1.0f);
      cdm::write_png_gray(cd_map_out, gray);
    }
  } else if (*mp) {
    const MetricChoice m = resolve_metric(mp_metric, mp_ppd);
    const cdm::ImageBuf a = cdm::read_png(mp_a);
    const cdm::ImageBuf b = cdm::read_png(mp_b);
    const cdm::CdMap map = metric_map(m, a, b, mp_ppd);
    cdm::ImageBuf gray = map.values;
    float scale = static_cast<float>(mp_ceiling);
    if (mp_normalize == "per-map") {
      scale = 0.0f;
      for (float v : gray.data) scale = std::max(scale, v);
      if (scale == 0.0f) scale = 1.0f;
    }
    for (auto& v : gray.data) v = std::clamp(v / scale, 0.0f, 1.0f);
    cdm::write_png_gray(mp_out, gray);
    std::printf("%.4f\n", map.mean);
  } else if (*tr) {
    tc.seed = seed;
    tc.checkpoint_dir = tr_out;
    std::filesystem::create_directories(tr_out);
    std::vector<cdm::PairRecord> records =
        cdm::load_manifest(tr_manifest, /*check_files=*/true);
    cdm::split_content_independent(records, tc.fractions, tc.seed);
    const cdm::TrainResult res =
        cdm::train(tc, records, cdm::file_image_provider());
    cdm::save_checkpoint(tr_out + "/model.ckpt", res.best);
    std::ostringstream hist;
    res.history.write_csv(hist);
    write_text_atomic(tr_out + "/history.csv", hist.str());
    std::printf("best epoch %d  val STRESS %.4f\n",
                res.history.best_epoch + 1, res.best.val_score);
  } else if (*ev) {
    const auto records = cdm::load_manifest(ev_manifest, /*check_files=*/true);
    std::vector<cdm::EvalReport> reports;
    for (const auto& sel : split_list(ev_metrics)) {
      const MetricChoice m = resolve_metric(sel, ev_ppd);
      const auto part =
          cdm::evaluate(pair_metric_from(m.metric), records, sel);
      reports.insert(reports.end(), part.begin(), part.end());
    }
    cdm::print_report_table(std::cout, reports);
    if (!ev_out.empty()) {
      std::ostringstream os;
      cdm::write_reports_csv(os, reports);
      write_text_atomic(ev_out, os.str());
    }
  } else if (*pr) {
    const cdm::RawRatings ratings = cdm::load_raw_ratings(pr_ratings);
    const cdm::ScoreResult scores = cdm::process_raw_scores(ratings);
    const cdm::csv::Table pairs = cdm::csv::read_file(pr_pairs);
    const int c_id = pairs.column("pair_id");
    const int c_ref = pairs.column("ref_path");
    const int c_test = pairs.column("test_path");
    const int c_al = pairs.column("aligned");
    const int c_cid = pairs.column("content_id");
    if (c_id < 0 || c_ref < 0 || c_test < 0 || c_al < 0 || c_cid < 0)
      throw cdm::ConfigError(pr_pairs +
                             ": pair table must have columns pair_id,"
                             "ref_path,test_path,aligned,content_id");
    std::vector<cdm::PairRecord> records;
    for (size_t i = 0; i < pairs.rows.size(); ++i) {
      const auto& row = pairs.rows[i];
      const auto it = scores.delta_v.find(row[c_id]);
      if (it == scores.delta_v.end())
        throw cdm::ConfigError(pr_pairs + " row " + std::to_string(i + 2) +
                               ": pair_id '" + row[c_id] +
                               "' has no ratings");
      cdm::PairRecord r;
      r.ref_path = row[c_ref];
      r.test_path = row[c_test];
      r.delta_v = it->second;
      r.aligned = row[c_al] != "0";
      r.content_id = row[c_cid];
      records.push_back(std::move(r));
    }
    cdm::save_manifest(pr_out, records);
    if (!pr_subjects.empty()) {
      std::ostringstream os;
      os << "subject_id,total,outliers,rejected\n";
      for (const auto& s : scores.subjects)
        os << cdm::csv::quote_if_needed(s.subject_id) << ',' << s.total_count
           << ',' << s.outlier_count << ',' << (s.rejected ? 1 : 0) << '\n';
      write_text_atomic(pr_subjects, os.str());
    }
    std::printf("%zu pairs, %ld outlier ratings flagged\n", records.size(),
                scores.outlier_ratings);
  } else if (*pb_tri) {
    const MetricChoice m = resolve_metric(tri_metric, tri_ppd);
    const auto records = cdm::load_manifest(tri_manifest, /*check_files=*/true);
    auto provider = cdm::file_image_provider();
    std::map<std::string, std::vector<cdm::ImageBuf>> by_content;
    std::map<std::string, std::set<std::string>> seen_paths;
    for (const auto& r : records) {
      auto [a, b] = provider(r);
      if (seen_paths[r.content_id].insert(r.ref_path).second)
        by_content[r.content_id].push_back(std::move(a));
      if (seen_paths[r.content_id].insert(r.test_path).second)
        by_content[r.content_id].push_back(std::move(b));
    }
    std::vector<std::vector<cdm::ImageBuf>> groups;
    for (auto& [id, imgs] : by_content) groups.push_back(std::move(imgs));
    const cdm::TripletReport rep =
        cdm::triangle_probe(m.metric, groups, tri_samples, seed, tri_tol);
    std::printf("triplets %ld  violations %ld  max margin %.3g\n",
                rep.triplets_tested, rep.violation_count,
                rep.max_violation_margin);
    if (!tri_out.empty()) {
      std::ostringstream os;
      os << "triplets,violations,max_margin,tolerance\n"
         << rep.triplets_tested << ',' << rep.violation_count << ','
         << rep.max_violation_margin << ',' << rep.tolerance << '\n';
      write_text_atomic(tri_out, os.str());
    }
    if (rep.violation_count > 0) return 4;
  } else if (*pb_ax) {
    const MetricChoice m = resolve_metric(ax_metric, ax_ppd);
    const cdm::AxiomReport rep =
        cdm::axiom_probe(m.metric, cdm::random_image_sampler(ax_size, ax_size),
                         ax_count, seed, ax_tol);
    std::printf(
        "pairs %ld  negativity %ld  symmetry %ld  identity %ld\n",
        rep.pairs_tested, rep.negativity_failures, rep.symmetry_failures,
        rep.identity_failures);
    if (!ax_out.empty()) {
      std::ostringstream os;
      os << "pairs,negativity_failures,symmetry_failures,identity_failures,"
            "tolerance\n"
         << rep.pairs_tested << ',' << rep.negativity_failures << ','
         << rep.symmetry_failures << ',' << rep.identity_failures << ','
         << rep.tolerance << '\n';
      write_text_atomic(ax_out, os.str());
    }
    if (rep.negativity_failures + rep.symmetry_failures +
        rep.identity_failures > 0)
      return 4;
  } else if (*pb_rec) {
    cdm::GradImageMetric gm;
    if (rec_metric == "de76") {
      gm = cdm::de76_pixel_mean_metric();
    } else if (rec_metric.rfind("cdnet:", 0) == 0) {
      gm = cdm::cdnet_grad_metric(
          cdm::load_checkpoint(rec_metric.substr(6)).params);
    } else {
      throw cdm::ConfigError("recover: metric must be de76 or "
                             "cdnet:<checkpoint>, got " + rec_metric);
    }
    const cdm::ImageBuf ref = cdm::read_png(rec_ref);
    cdm::ImageBuf init;
    if (!rec_init.empty()) {
      init = cdm::read_png(rec_init);
    } else {
      init = ref;
      std::mt19937 rng(seed);
      std::normal_distribution<float> noise(0.0f,
                                            static_cast<float>(rec_noise));
      for (auto& v : init.data) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
    }
    const cdm::RecoveryResult res = cdm::recover_reference(gm, ref, init, rc);
    cdm::write_png(rec_out, res.recovered);
    if (!rec_traj.empty()) {
      std::ostringstream os;
      os << "step,cd\n";
      for (size_t i = 0; i < res.trajectory.size(); ++i)
        os << i << ',' << res.trajectory[i] << '\n';
      write_text_atomic(rec_traj, os.str());
    }
    std::printf("final CD %.6f after %zu steps\n",
                res.trajectory.empty() ? 0.0 : res.trajectory.back(),
                res.trajectory.size());
  } else if (*pe) {
    const auto patches = cdm::load_patch_set(pe_patches);
    if (patches.empty())
      throw cdm::ConfigError(pe_patches + ": patch set is empty");
    long clipped = 0;
    std::vector<std::pair<cdm::ImageBuf, cdm::ImageBuf>> rendered;
    std::vector<double> targets;
    for (const auto& p : patches) {
      rendered.push_back(cdm::render_patch_pair(p, pe_size, &clipped));
      targets.push_back(p.delta_v);
    }
    std::vector<cdm::EvalReport> reports;
    for (const auto& sel : split_list(pe_metrics)) {
      const MetricChoice m = resolve_metric(sel, pe_ppd);
      std::vector<double> preds;
      for (const auto& [a, b] : rendered) preds.push_back(m.metric(a, b));
      reports.push_back(cdm::evaluate_vectors(preds, targets, sel, "all"));
    }
    std::printf("%zu patch pairs, %ld clipped channel values\n",
                patches.size(), clipped);
    cdm::print_report_table(std::cout, reports);
    if (!pe_out.empty()) {
      std::ostringstream os;
      cdm::write_reports_csv(os, reports);
      write_text_atomic(pe_out, os.str());
    }
  }
  return 0;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cdm::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const cdm::DimensionError& e) {
    std::fprintf(stderr, "dimension error: %s\n", e.what());
    return 3;
  } catch (const cdm::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 2;
  } catch (const cdm::NumericError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
