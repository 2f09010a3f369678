/* Copyright (c) 2026 BoxSeg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "boxseg/checkpoint.hpp"
#include "boxseg/decoder.hpp"
#include "boxseg/loss.hpp"
#include "boxseg/metrics.hpp"
#include "boxseg/synthetic.hpp"

namespace boxseg {

// Adaptive-moment gradient descent aligned with the parameter store order.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<double>> m, v;

  void init(const ParamStore& store) {
    m.clear();
    v.clear();
    for (const auto& [name, p] : store.items()) {
      m.emplace_back(p.data().size(), 0.0);
      v.emplace_back(p.data().size(), 0.0);
    }
  }

  void apply(ParamStore& store) {
    if (m.size() != store.items().size()) init(store);
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < store.items().size(); ++i) {
      Tensor p = store.items()[i].second;
      auto& data = p.mutable_data();
      const bool has_grad = p.has_grad();
      for (size_t k = 0; k < data.size(); ++k) {
        const double g = has_grad ? p.grad()[k] : 0.0;
        m[i][k] = beta1 * m[i][k] + (1.0 - beta1) * g;
        v[i][k] = beta2 * v[i][k] + (1.0 - beta2) * g * g;
        const double mh = m[i][k] / bc1;
        const double vh = v[i][k] / bc2;
        data[k] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }
};

struct TrainConfig {
  DecoderConfig decoder = tiny_config();
  LossConfig loss;
  double lambda_iou = 1.0;
  double lr = 1e-3;
  int batch_size = 4;
  int max_steps = 5000;
  uint64_t param_seed = 7;
  uint64_t train_seed = 17;
  uint64_t eval_seed = 1717;
  int eval_every = 200;
  int quick_eval_count = 32;
  int final_eval_count = 200;
  double early_stop_miou = 0.93;  // quick-eval pass-2 mIoU that ends training
  std::string out_dir;            // metrics.jsonl + checkpoint.bskp when set
};

struct EvalStats {
  double miou_pass1 = 0.0;
  double miou_pass2 = 0.0;
  double iou_head_mae = 0.0;
};

inline BinaryMask binarize_logits(const Tensor& logits) {
  BinaryMask m(static_cast<int>(logits.dim(1)),
               static_cast<int>(logits.dim(0)));
  for (size_t i = 0; i < m.size(); ++i)
    m.bits[i] = logits.data()[i] > 0.0 ? 1 : 0;
  return m;
}

inline std::string state_extrema(const DecoderState& st) {
  std::ostringstream os;
  auto dump = [&os](const char* name, const Tensor& t) {
    if (!t.defined()) return;
    double lo = t.data()[0], hi = t.data()[0];
    for (double v : t.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    os << " " << name << "=[" << lo << "," << hi << "]";
  };
  dump("f_fuse", st.f_fuse);
  dump("f_mem", st.f_mem);
  dump("q1", st.q1);
  dump("f_pixel", st.f_pixel);
  dump("m1", st.m1_logit);
  dump("q2", st.q2);
  dump("m2", st.m2_logit);
  dump("s_iou", st.s_iou);
  return os.str();
}

// One optimization step over a batch: both mask passes supervised, plus a
// squared-error target for the confidence head against the binarized pass-2
// IoU (treated as a constant).
inline double train_step(DecoderParams& params, AdamState& opt,
                         const std::vector<SyntheticSample>& batch,
                         const TrainConfig& cfg) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  params.store.zero_grads();
  Tensor total = Tensor::scalar(0.0);
  DecoderState last_state;
  try {
    for (const SyntheticSample& s : batch) {
      DecoderInputs in = sample_to_inputs(s);
      DecoderState st = forward(in, params, cfg.decoder, cfg.decoder.pixel_h,
                                cfg.decoder.pixel_w);
      Tensor target = mask_to_tensor(s.target_mask);
      Tensor sample_loss = ops::add(bce_dice_loss(st.m1_logit, target, cfg.loss),
                                    bce_dice_loss(st.m2_logit, target, cfg.loss));
      const double iou2 = mask_iou(binarize_logits(st.m2_logit), s.target_mask);
      Tensor err = ops::add_scalar(st.s_iou, -iou2);
      sample_loss =
          ops::add(sample_loss, ops::mul_scalar(ops::mul(err, err),
                                                cfg.lambda_iou));
      total = ops::add(total, sample_loss);
      last_state = st;
    }
  } catch (const NumericError& e) {
    throw NumericError(std::string("train_step aborted: ") + e.what() +
                       "; last good state extrema:" +
                       state_extrema(last_state));
  }
  total = ops::mul_scalar(total, 1.0 / static_cast<double>(batch.size()));
  const double loss_value = total.scalar_value();
  if (!std::isfinite(loss_value)) {
    throw NumericError("train_step: non-finite loss;" +
                       state_extrema(last_state));
  }
  backward(total);
  opt.lr = cfg.lr;
  opt.apply(params.store);
  return loss_value;
}

inline EvalStats evaluate_heldout(const DecoderParams& params,
                                  const TrainConfig& cfg, int64_t count) {
  NoGradGuard no_grad;
  EvalStats st;
  for (int64_t i = 0; i < count; ++i) {
    SyntheticSample s = generate_sample(cfg.eval_seed,
                                        static_cast<uint64_t>(i), cfg.decoder);
    DecoderInputs in = sample_to_inputs(s);
    DecoderState out = forward(in, params, cfg.decoder, cfg.decoder.pixel_h,
                               cfg.decoder.pixel_w);
    const double iou1 = mask_iou(binarize_logits(out.m1_logit), s.target_mask);
    const double iou2 = mask_iou(binarize_logits(out.m2_logit), s.target_mask);
    st.miou_pass1 += iou1;
    st.miou_pass2 += iou2;
    st.iou_head_mae += std::abs(out.s_iou.scalar_value() - iou2);
  }
  st.miou_pass1 /= static_cast<double>(count);
  st.miou_pass2 /= static_cast<double>(count);
  st.iou_head_mae /= static_cast<double>(count);
  return st;
}

inline std::vector<std::pair<std::string, Tensor>> checkpoint_tensors(
    DecoderParams& params, const AdamState& opt) {
  std::vector<std::pair<std::string, Tensor>> out = params.store.items();
  for (size_t i = 0; i < opt.m.size(); ++i) {
    const auto& [name, p] = params.store.items()[i];
    out.emplace_back("adam.m." + name,
                     Tensor::from_data(p.shape(), opt.m[i]));
    out.emplace_back("adam.v." + name,
                     Tensor::from_data(p.shape(), opt.v[i]));
  }
  return out;
}

inline void save_training_checkpoint(const std::string& path,
                                     DecoderParams& params,
                                     const AdamState& opt, int64_t next_step,
                                     const TrainConfig& cfg) {
  nlohmann::json meta;
  meta["next_step"] = next_step;
  meta["adam_t"] = opt.t;
  meta["train_seed"] = cfg.train_seed;
  meta["batch_size"] = cfg.batch_size;
  auto tensors = checkpoint_tensors(params, opt);
  save_checkpoint(path, tensors, meta);
}

// Returns the step to continue from.
inline int64_t load_training_checkpoint(const std::string& path,
                                        DecoderParams& params,
                                        AdamState& opt) {
  Checkpoint ck = load_checkpoint(path);
  auto items = params.store.items();
  restore_tensors(ck, items);
  opt.init(params.store);
  for (size_t i = 0; i < items.size(); ++i) {
    const auto& name = items[i].first;
    if (const CheckpointEntry* em = ck.find("adam.m." + name)) {
      opt.m[i] = em->values;
    }
    if (const CheckpointEntry* ev = ck.find("adam.v." + name)) {
      opt.v[i] = ev->values;
    }
  }
  opt.t = ck.meta.value("adam_t", int64_t{0});
  return ck.meta.value("next_step", int64_t{0});
}

struct TrainResult {
  int64_t steps_run = 0;
  double final_loss = 0.0;
  EvalStats final_eval;
  std::string checkpoint_path;
  std::string metrics_path;
};

inline std::vector<SyntheticSample> batch_for_step(const TrainConfig& cfg,
                                                   int64_t step) {
  return generate_samples(cfg.train_seed, cfg.batch_size, cfg.decoder,
                          step * cfg.batch_size);
}

// Toy training: streams seeded synthetic scenes, evaluates on a held-out
// stream, logs JSON-lines metrics, and writes a resumable checkpoint.
inline TrainResult train_loop(const TrainConfig& cfg,
                              const std::string& resume_from = "") {
  cfg.decoder.validate();
  cfg.loss.validate();
  DecoderParams params = build_decoder_params(cfg.decoder, cfg.param_seed);
  AdamState opt;
  opt.lr = cfg.lr;
  opt.init(params.store);
  int64_t start_step = 0;
  if (!resume_from.empty()) {
    start_step = load_training_checkpoint(resume_from, params, opt);
  }

  std::ofstream metrics;
  TrainResult res;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    res.metrics_path = cfg.out_dir + "/metrics.jsonl";
    res.checkpoint_path = cfg.out_dir + "/checkpoint.bskp";
    metrics.open(res.metrics_path, start_step == 0 ? std::ios::trunc
                                                   : std::ios::app);
    if (!metrics) {
      throw std::runtime_error("cannot open metrics log in " + cfg.out_dir);
    }
  }

  double loss_value = 0.0;
  int64_t step = start_step;
  for (; step < cfg.max_steps; ++step) {
    loss_value = train_step(params, opt, batch_for_step(cfg, step), cfg);
    const bool do_eval =
        (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.max_steps;
    if (do_eval) {
      EvalStats ev = evaluate_heldout(params, cfg, cfg.quick_eval_count);
      if (metrics.is_open()) {
        nlohmann::json rec;
        rec["step"] = step + 1;
        rec["loss"] = loss_value;
        rec["miou_pass1"] = ev.miou_pass1;
        rec["miou_pass2"] = ev.miou_pass2;
        rec["iou_head_mae"] = ev.iou_head_mae;
        metrics << rec.dump() << "\n";
        metrics.flush();
      }
      if (ev.miou_pass2 >= cfg.early_stop_miou) {
        ++step;
        break;
      }
    }
  }

  res.steps_run = step;
  res.final_loss = loss_value;
  res.final_eval = evaluate_heldout(params, cfg, cfg.final_eval_count);
  if (!cfg.out_dir.empty()) {
    save_training_checkpoint(res.checkpoint_path, params, opt, step, cfg);
    if (metrics.is_open()) {
      nlohmann::json rec;
      rec["step"] = step;
      rec["loss"] = loss_value;
      rec["miou_pass1"] = res.final_eval.miou_pass1;
      rec["miou_pass2"] = res.final_eval.miou_pass2;
      rec["iou_head_mae"] = res.final_eval.iou_head_mae;
      metrics << rec.dump() << "\n";
    }
  }
  return res;
}

}  // namespace boxseg
