#include "csn/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "csn/common.hpp"
#include "csn/ops.hpp"
#include "json.hpp"

namespace csn {

void TrainConfig::validate() const {
  detail::require(std::isfinite(base_lr) && base_lr > 0, "train config: base_lr must be positive");
  detail::require(warmup_epochs >= 0, "train config: warmup_epochs must be >= 0");
  detail::require(total_epochs >= 1 && iters_per_epoch >= 1,
                  "train config: epoch counts must be positive");
  detail::require(warmup_epochs < total_epochs,
                  "train config: warmup_epochs must be < total_epochs");
  detail::require(momentum >= 0 && momentum < 1, "train config: momentum must be in [0, 1)");
  detail::require(std::isfinite(weight_decay) && weight_decay >= 0,
                  "train config: weight_decay must be >= 0");
  detail::require(batch_size >= 1, "train config: batch_size must be positive");
  detail::require(eval_every >= 0 && checkpoint_every >= 0 && eval_clips >= 1,
                  "train config: cadences must be >= 0");
}

double lr_at(std::int64_t iter, const TrainConfig& cfg) {
  cfg.validate();
  detail::require(iter >= 0, "lr_at: iter must be >= 0");
  const std::int64_t warm = cfg.warmup_iters();
  if (iter < warm) return cfg.base_lr * static_cast<double>(iter + 1) / static_cast<double>(warm);
  double p = static_cast<double>(iter - warm) / static_cast<double>(cfg.total_iters() - warm);
  if (p > 1.0) p = 1.0;
  return cfg.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * p));
}

void sgd_step(Model& model, const ParamMap& grads, ParamMap& velocity, double lr,
              const TrainConfig& cfg) {
  const float m = static_cast<float>(cfg.momentum);
  const float lrf = static_cast<float>(lr);
  for (const auto& [name, grad] : grads) {
    detail::require(!is_buffer(name), "sgd: gradient for buffer " + name);
    Tensor5& param = model.param(name);
    detail::require(grad.shape == param.shape, "sgd: shape mismatch for " + name);
    auto [it, fresh] = velocity.try_emplace(name, Tensor5::zeros(grad.shape));
    Tensor5& vel = it->second;
    detail::require(fresh || vel.shape == grad.shape, "sgd: velocity shape mismatch for " + name);
    const float wd = decay_exempt(name) ? 0.0f : static_cast<float>(cfg.weight_decay);
    for (std::int64_t i = 0; i < grad.size(); ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      vel.data[k] = m * vel.data[k] + grad.data[k] + wd * param.data[k];
      param.data[k] -= lrf * vel.data[k];
    }
  }
}

namespace {

// Row softmax in double; logits shape (n, classes, 1, 1, 1).
std::vector<double> softmax_row(const Tensor5& logits, std::int64_t row) {
  const std::int64_t k = logits.shape.c;
  std::vector<double> p(static_cast<std::size_t>(k));
  double hi = -1e300;
  for (std::int64_t c = 0; c < k; ++c) hi = std::max(hi, double(logits.at(row, c, 0, 0, 0)));
  double sum = 0.0;
  for (std::int64_t c = 0; c < k; ++c) {
    p[std::size_t(c)] = std::exp(double(logits.at(row, c, 0, 0, 0)) - hi);
    sum += p[std::size_t(c)];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::int64_t argmax(const std::vector<double>& v) {
  std::int64_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[std::size_t(best)]) best = static_cast<std::int64_t>(i);
  return best;
}

bool all_finite(const Tensor5& t) {
  for (float v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

// Walks the forward cache in execution order; empty result means every
// recorded activation is finite.
std::string first_nonfinite_layer(const NetworkPlan& plan, const ForwardCache& cache,
                                  const Tensor5& logits) {
  if (!all_finite(cache.conv1.bn_in) || !all_finite(cache.conv1.relu_in)) return plan.conv1.name;
  for (std::size_t b = 0; b < plan.blocks.size(); ++b) {
    const BlockPlan& block = plan.blocks[b];
    for (std::size_t l = 0; l < block.layers.size(); ++l) {
      const ConvTapeT<float>& tape = cache.block_main[b][l];
      if (!all_finite(tape.bn_in) || !all_finite(tape.relu_in)) return block.layers[l].name;
    }
    if (block.projection && !all_finite(cache.block_proj[b].bn_in))
      return block.projection->name;
    if (!all_finite(cache.block_sum[b])) return block.name;
  }
  if (!all_finite(cache.fc_in)) return "gap";
  if (!all_finite(logits)) return "fc";
  return "";
}

}  // namespace

EvalResult evaluate(const Model& model, const std::vector<VideoClip>& videos,
                    const SampleSpec& sample, std::int64_t n_clips) {
  detail::require(!videos.empty(), "evaluate: empty dataset");
  sample.validate();
  detail::require(n_clips >= 1, "evaluate: n_clips must be positive");

  std::int64_t clip_hits = 0, video_hits = 0;
  for (const VideoClip& video : videos) {
    const std::vector<Tensor5> clips = sample_eval_clips(video, sample, n_clips);
    Tensor5 batch({n_clips, 3, sample.clip_len, sample.crop, sample.crop}, 0.0f);
    for (std::int64_t j = 0; j < n_clips; ++j)
      std::copy(clips[std::size_t(j)].data.begin(), clips[std::size_t(j)].data.end(),
                batch.data.begin() + batch.offset(j, 0, 0, 0, 0));
    const Tensor5 logits = model_forward(model, batch);

    std::vector<double> mean(static_cast<std::size_t>(logits.shape.c), 0.0);
    for (std::int64_t j = 0; j < n_clips; ++j) {
      const std::vector<double> p = softmax_row(logits, j);
      if (argmax(p) == video.label) ++clip_hits;
      for (std::size_t c = 0; c < p.size(); ++c) mean[c] += p[c] / double(n_clips);
    }
    if (argmax(mean) == video.label) ++video_hits;
  }
  return {double(clip_hits) / double(videos.size() * n_clips),
          double(video_hits) / double(videos.size())};
}

RunHistory train(Model& model, const std::vector<VideoClip>& train_set,
                 const std::vector<VideoClip>& eval_set, const SampleSpec& sample,
                 const TrainConfig& cfg) {
  cfg.validate();
  sample.validate();
  detail::require(!train_set.empty(), "train: empty dataset");
  detail::require(cfg.eval_every == 0 || !eval_set.empty(),
                  "train: eval cadence set but eval set is empty");
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  const std::int64_t n_videos = static_cast<std::int64_t>(train_set.size());
  const Rng root(cfg.seed);
  ParamMap velocity;
  RunHistory hist;

  for (std::int64_t iter = 0; iter < cfg.total_iters(); ++iter) {
    const Rng iter_rng = root.split(static_cast<std::uint64_t>(iter));
    Tensor5 batch({cfg.batch_size, 3, sample.clip_len, sample.crop, sample.crop}, 0.0f);
    std::vector<std::int64_t> labels(static_cast<std::size_t>(cfg.batch_size), 0);
    parallel_for(cfg.batch_size, [&](std::int64_t j) {
      Rng item = iter_rng.split(static_cast<std::uint64_t>(j));
      const std::int64_t idx = item.next_index(n_videos);
      const Tensor5 clip = sample_train_clip(train_set[std::size_t(idx)], sample, item);
      std::copy(clip.data.begin(), clip.data.end(), batch.data.begin() + batch.offset(j, 0, 0, 0, 0));
      labels[std::size_t(j)] = train_set[std::size_t(idx)].label;
    });

    ForwardCache cache;
    const Tensor5 logits = model_forward(model, batch, true, &cache);
    const XentResult xent = softmax_xent(logits, labels);
    if (!std::isfinite(xent.loss) || std::abs(xent.loss) > 50.0) {
      const std::string layer = first_nonfinite_layer(model.plan, cache, logits);
      std::string msg = "training diverged at iteration " + std::to_string(iter) +
                        " (loss " + std::to_string(xent.loss) + ")";
      if (!layer.empty()) msg += "; first non-finite activation in layer " + layer;
      throw std::runtime_error(msg);
    }

    const ParamMap grads = model_backward(model, cache, xent.grad_logits);
    const double lr = lr_at(iter, cfg);
    sgd_step(model, grads, velocity, lr, cfg);

    std::int64_t wrong = 0;
    for (std::int64_t j = 0; j < cfg.batch_size; ++j) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < xent.probs.shape.c; ++c)
        if (xent.probs.at(j, c, 0, 0, 0) > xent.probs.at(j, best, 0, 0, 0)) best = c;
      wrong += best != labels[std::size_t(j)];
    }
    hist.rows.push_back({iter, lr, xent.loss, double(wrong) / double(cfg.batch_size)});

    const std::int64_t done = iter + 1;
    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        done % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "iter_%06lld.csnw", static_cast<long long>(done));
      save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) / name).string(), model.params);
    }
    if (cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.total_iters())) {
      const EvalResult r = evaluate(model, eval_set, sample, cfg.eval_clips);
      hist.evals.push_back({done, r.clip_top1, r.video_top1});
      if (cfg.early_stop_video_acc >= 0 && r.video_top1 >= cfg.early_stop_video_acc) break;
    }
  }

  if (!cfg.checkpoint_dir.empty())
    save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) / "final.csnw").string(),
                    model.params);
  return hist;
}

std::string RunHistory::csv() const {
  std::string out = "iter,lr,loss,train_err\n";
  char line[128];
  for (const HistoryRow& r : rows) {
    std::snprintf(line, sizeof(line), "%lld,%.12g,%.12g,%.12g\n",
                  static_cast<long long>(r.iter), r.lr, r.loss, r.train_err);
    out += line;
  }
  return out;
}

std::string RunHistory::json() const {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const HistoryRow& r : rows)
    j["rows"].push_back(
        {{"iter", r.iter}, {"lr", r.lr}, {"loss", r.loss}, {"train_err", r.train_err}});
  j["evals"] = nlohmann::ordered_json::array();
  for (const EvalRow& e : evals)
    j["evals"].push_back(
        {{"iter", e.iter}, {"clip_top1", e.clip_top1}, {"video_top1", e.video_top1}});
  return j.dump(2) + "\n";
}

}  // namespace csn
