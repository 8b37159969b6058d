#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cdm/checkpoint.hpp"
#include "cdm/dataset.hpp"
#include <ostream>

#include "cdm/evaluator.hpp"
#include "cdm/model.hpp"
#include "cdm/nn.hpp"

namespace cdm {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int epochs = 100;
  int lr_halving_period = 50;  // epochs
  int crop = 768;
  unsigned seed = 0;
  SplitFractions fractions;
  std::string checkpoint_dir = ".";
  bool use_mae = false;  // sensitivity switch; default is mean squared error
  // Early exit once both thresholds are met (0 disables).
  double early_stop_train_stress = 0.0;
  double early_stop_val_stress = 0.0;
  // Optional per-epoch progress line (e.g. &std::cerr); off when null.
  std::ostream* progress = nullptr;

  void validate() const {
    if (learning_rate <= 0 || batch_size <= 0 || epochs <= 0 ||
        lr_halving_period <= 0 || crop <= 0)
      throw ConfigError("train config values must be positive");
  }
};

struct EpochStats {
  double train_loss = 0.0;
  double train_stress = 0.0;
  double val_stress = 0.0;
  double val_plcc = 0.0;
  double val_srcc = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // 0-based index; minimizes validation STRESS

  void write_csv(std::ostream& os) const {
    os << "epoch,train_loss,train_stress,val_stress,val_plcc,val_srcc,lr\n";
    char buf[256];
    for (size_t i = 0; i < epochs.size(); ++i) {
      const auto& e = epochs[i];
      std::snprintf(buf, sizeof buf, "%zu,%.8g,%.6f,%.6f,%.6f,%.6f,%.8g\n",
                    i + 1, e.train_loss, e.train_stress, e.val_stress,
                    e.val_plcc, e.val_srcc, e.lr);
      os << buf;
    }
  }
};

// Mean over the batch of squared differences.
inline double mse_loss(const std::vector<double>& predictions,
                       const std::vector<double>& targets) {
  if (predictions.empty() || predictions.size() != targets.size())
    throw ConfigError("mse_loss: empty or mismatched batch");
  double s = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - targets[i];
    s += d * d;
  }
  return s / static_cast<double>(predictions.size());
}

// Supplies the decoded image pair for a record. Kept as a hook so tests
// and synthetic runs can train from in-memory images.
using ImageProvider =
    std::function<std::pair<ImageBuf, ImageBuf>(const PairRecord&)>;

// PNG loader with a decoded-image cache keyed by path.
inline ImageProvider file_image_provider(bool cache = true) {
  auto store = std::make_shared<std::map<std::string, ImageBuf>>();
  return [store, cache](const PairRecord& r) {
    auto fetch = [&](const std::string& path) -> ImageBuf {
      if (cache) {
        auto it = store->find(path);
        if (it != store->end()) return it->second;
        return store->emplace(path, read_png(path)).first->second;
      }
      return read_png(path);
    };
    return std::make_pair(fetch(r.ref_path), fetch(r.test_path));
  };
}

struct TrainResult {
  Checkpoint best;
  TrainHistory history;
};

namespace detail {

struct ParamGroups {
  std::vector<std::string> names;
  std::vector<std::vector<float>*> params;
  std::vector<std::vector<float>> grads;
  std::vector<nn::AdamState<float>> adam;

  explicit ParamGroups(CdNetParams<float>& p, double lr) {
    names = {"branch1x1", "branch11x11", "head1", "head2", "head3"};
    for (auto* layer : p.conv_layers()) params.push_back(&layer->weights);
    names.push_back("metric_l");
    params.push_back(&p.metric_l);
    for (auto* v : params) {
      grads.emplace_back(v->size(), 0.0f);
      adam.emplace_back(v->size(), static_cast<float>(lr));
    }
  }
  void zero_grads() {
    for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0f);
  }
  void step(double lr) {
    for (size_t i = 0; i < params.size(); ++i) {
      adam[i].lr = static_cast<float>(lr);
      nn::adam_step(*params[i], grads[i], adam[i], names[i]);
    }
  }
};

inline void accumulate_pair_grads(const nn::Tape<float>& tape,
                                  const CdNetGraph<float>& g,
                                  ParamGroups& groups) {
  const nn::Tape<float>::Id ids[6] = {g.w_b1, g.w_b11, g.w_h1,
                                      g.w_h2, g.w_h3, g.w_l};
  for (int i = 0; i < 6; ++i) {
    const auto& grad = tape.grad(ids[i]);
    auto& acc = groups.grads[i];
    for (size_t j = 0; j < acc.size(); ++j) acc[j] += grad.data[j];
  }
}

}  // namespace detail

// Trains CD-Net on the records marked Split::Train, validating per epoch
// on Split::Val at full image size, halving the learning rate every
// lr_halving_period epochs, and checkpointing the epoch with the lowest
// validation STRESS (the model-selection criterion recorded in history).
inline TrainResult train(const TrainConfig& cfg,
                         const std::vector<PairRecord>& records,
                         const ImageProvider& provider) {
  cfg.validate();
  std::vector<const PairRecord*> train_set, val_set;
  for (const auto& r : records) {
    if (r.split == Split::Train) train_set.push_back(&r);
    else if (r.split == Split::Val) val_set.push_back(&r);
  }
  if (train_set.empty() || val_set.empty())
    throw ConfigError("train: need nonempty train and val splits");

  CdNetParams<float> params = build_cdnet<float>(cfg.seed);
  std::mt19937 rng(cfg.seed);

  // Calibrate the initial output scale against the training targets.
  // The freshly built network predicts on an arbitrary scale; a uniform
  // mismatch makes every early gradient push in the same "rescale"
  // direction, which with Adam's scale-free steps scrambles the weights
  // before any shape learning happens. Scaling the metric factor L
  // scales every predicted CD linearly, so one pass over a few training
  // pairs fixes the mismatch exactly without touching the conv weights.
  {
    double pred_sum = 0.0, target_sum = 0.0;
    const size_t n_cal = std::min<size_t>(train_set.size(), 16);
    for (size_t i = 0; i < n_cal; ++i) {
      const PairRecord& rec = *train_set[i];
      auto [img_a, img_b] = provider(rec);
      if (img_a.height > cfg.crop || img_a.width > cfg.crop) {
        auto cropped = sample_crop(img_a, img_b, cfg.crop, rng);
        img_a = std::move(cropped.first);
        img_b = std::move(cropped.second);
      }
      pred_sum += cdnet_overall_cd(img_a, img_b, params).mean;
      target_sum += rec.delta_v;
    }
    if (std::isfinite(pred_sum) && pred_sum > 1e-12 && target_sum > 0.0) {
      const float scale = static_cast<float>(target_sum / pred_sum);
      for (auto& v : params.metric_l) v *= scale;
    }
  }

  detail::ParamGroups groups(params, cfg.learning_rate);

  TrainResult result;
  result.best.seed = cfg.seed;
  double best_val_stress = std::numeric_limits<double>::infinity();
  constexpr float kSqrtGuard = 1e-12f;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr =
        cfg.learning_rate *
        std::pow(0.5, static_cast<double>(epoch / cfg.lr_halving_period));
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    size_t loss_batches = 0;
    std::vector<double> epoch_preds, epoch_targets;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const double bsz = static_cast<double>(end - start);
      groups.zero_grads();
      double batch_loss = 0.0;
      for (size_t bi = start; bi < end; ++bi) {
        const PairRecord& rec = *train_set[order[bi]];
        auto [img_a, img_b] = provider(rec);
        if (img_a.height > cfg.crop || img_a.width > cfg.crop) {
          auto cropped = sample_crop(img_a, img_b, cfg.crop, rng);
          img_a = std::move(cropped.first);
          img_b = std::move(cropped.second);
        }
        nn::Tape<float> tape;
        const auto graph = cdnet_record<float>(
            tape, params, detail::image_to_tensor<float>(img_a),
            detail::image_to_tensor<float>(img_b), kSqrtGuard);
        const double pred = tape.value(graph.delta_e).data[0];
        const double residual = pred - rec.delta_v;
        batch_loss += (cfg.use_mae ? std::abs(residual) : residual * residual) /
                      bsz;
        const double seed_grad =
            (cfg.use_mae ? (residual > 0 ? 1.0 : (residual < 0 ? -1.0 : 0.0))
                         : 2.0 * residual) /
            bsz;
        tape.backward(graph.delta_e, static_cast<float>(seed_grad));
        detail::accumulate_pair_grads(tape, graph, groups);
        epoch_preds.push_back(pred);
        epoch_targets.push_back(rec.delta_v);
      }
      if (!std::isfinite(batch_loss))
        throw NumericError("train: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(start / cfg.batch_size));
      groups.step(lr);
      loss_sum += batch_loss;
      ++loss_batches;
    }

    EpochStats stats;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(loss_batches);
    try {
      stats.train_stress = stress(epoch_preds, epoch_targets);
    } catch (const Error&) {
      stats.train_stress = 100.0;
    }

    // Validation at original image size.
    std::vector<double> ve, vv;
    for (const auto* rec : val_set) {
      auto [img_a, img_b] = provider(*rec);
      ve.push_back(cdnet_overall_cd(img_a, img_b, params).mean);
      vv.push_back(rec->delta_v);
    }
    try {
      stats.val_stress = stress(ve, vv);
    } catch (const Error&) {
      stats.val_stress = 100.0;
    }
    try {
      stats.val_plcc = plcc(ve, vv, true);
      stats.val_srcc = srcc(ve, vv);
    } catch (const Error&) {
      stats.val_plcc = stats.val_srcc = 0.0;
    }
    result.history.epochs.push_back(stats);
    if (cfg.progress)
      *cfg.progress << "epoch " << epoch << "  loss " << stats.train_loss
                    << "  train STRESS " << stats.train_stress
                    << "  val STRESS " << stats.val_stress << "  lr " << lr
                    << std::endl;

    if (stats.val_stress < best_val_stress) {
      best_val_stress = stats.val_stress;
      result.history.best_epoch = epoch - 1;
      result.best.params = params;
      result.best.epoch = epoch;
      result.best.val_score = stats.val_stress;
    }
    if (cfg.early_stop_train_stress > 0 && cfg.early_stop_val_stress > 0 &&
        stats.train_stress < cfg.early_stop_train_stress &&
        stats.val_stress < cfg.early_stop_val_stress)
      break;
  }
  return result;
}

struct CrossValResult {
  std::vector<std::vector<EvalReport>> per_repeat;  // test-split reports
  std::vector<EvalReport> mean;  // averaged per subset label
};

// Re-splits with seeds seed+i, trains, evaluates each best checkpoint on
// its test split, and reports per-repeat and mean statistics.
inline CrossValResult cross_validate(const TrainConfig& cfg,
                                     std::vector<PairRecord> records,
                                     const ImageProvider& provider,
                                     int repeats = 10) {
  if (repeats < 1) throw ConfigError("cross_validate: repeats must be >= 1");
  CrossValResult out;
  for (int i = 0; i < repeats; ++i) {
    TrainConfig run = cfg;
    run.seed = cfg.seed + static_cast<unsigned>(i);
    split_content_independent(records, run.fractions, run.seed);
    const TrainResult tr = train(run, records, provider);
    std::vector<PairRecord> test_set;
    for (const auto& r : records)
      if (r.split == Split::Test) test_set.push_back(r);
    const CdNetParams<float> best = tr.best.params;
    PairMetric metric = [&best, &provider](const PairRecord& r) {
      auto [a, b] = provider(r);
      return cdnet_overall_cd(a, b, best).mean;
    };
    out.per_repeat.push_back(
        evaluate(metric, test_set, "cdnet[repeat=" + std::to_string(i) + "]"));
  }
  // Mean per subset.
  for (const char* subset : {"aligned", "non-aligned", "all"}) {
    EvalReport mean;
    mean.method = "cdnet[mean]";
    mean.subset = subset;
    int n = 0;
    for (const auto& reports : out.per_repeat)
      for (const auto& r : reports)
        if (r.subset == subset) {
          mean.stress += r.stress;
          mean.plcc += r.plcc;
          mean.srcc += r.srcc;
          mean.pair_count += r.pair_count;
          ++n;
        }
    if (n > 0) {
      mean.stress /= n;
      mean.plcc /= n;
      mean.srcc /= n;
      out.mean.push_back(mean);
    }
  }
  return out;
}

}  // namespace cdm
