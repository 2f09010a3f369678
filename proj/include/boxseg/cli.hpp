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
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "boxseg/decoder.hpp"
#include "boxseg/fusion.hpp"
#include "boxseg/manifest.hpp"
#include "boxseg/parse_output.hpp"
#include "boxseg/pgm.hpp"
#include "boxseg/train.hpp"

namespace boxseg {
namespace cli {

inline DecoderConfig profile_config(const std::string& name) {
  if (name == "default") return default_config();
  if (name == "tiny") return tiny_config();
  throw ConfigError("unknown profile: " + name + " (use default or tiny)");
}

inline void apply_decoder_overrides(DecoderConfig& cfg,
                                    const nlohmann::json& j) {
  auto opt = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].template get<std::decay_t<decltype(field)>>();
  };
  opt("num_vit_levels", cfg.num_vit_levels);
  opt("vit_channels", cfg.vit_channels);
  opt("mm_dim", cfg.mm_dim);
  opt("seg_dim", cfg.seg_dim);
  opt("hidden_dim", cfg.hidden_dim);
  opt("memory_h", cfg.memory_h);
  opt("memory_w", cfg.memory_w);
  opt("pixel_h", cfg.pixel_h);
  opt("pixel_w", cfg.pixel_w);
  opt("upsample_r1", cfg.upsample_r1);
  opt("upsample_r2", cfg.upsample_r2);
  opt("fourier_frequencies", cfg.fourier_frequencies);
  opt("decoder_layers", cfg.decoder_layers);
  opt("attention_heads", cfg.attention_heads);
  opt("ffn_dim", cfg.ffn_dim);
  opt("fuse_mid", cfg.fuse_mid);
  opt("stem_widths", cfg.stem_widths);
  opt("up_mid", cfg.up_mid);
  opt("up_out", cfg.up_out);
  opt("pixel_dim", cfg.pixel_dim);
  opt("box_mlp_hidden", cfg.box_mlp_hidden);
  opt("kernel_hidden", cfg.kernel_hidden);
  opt("ref_hidden", cfg.ref_hidden);
  opt("norm_groups", cfg.norm_groups);
  opt("injector_scale_init", cfg.injector_scale_init);
  opt("gate_alpha", cfg.gate_alpha);
  opt("enlargement_ratio", cfg.enlargement_ratio);
  opt("eps", cfg.eps);
}

inline DecoderConfig load_decoder_config(const std::string& profile,
                                         const std::string& config_path) {
  DecoderConfig cfg = profile_config(profile);
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file: " + config_path);
    apply_decoder_overrides(cfg, nlohmann::json::parse(in));
  }
  cfg.validate();
  return cfg;
}

inline FusionConfig load_fusion_config(const std::string& config_path) {
  FusionConfig cfg;
  if (config_path.empty()) return cfg;
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open config file: " + config_path);
  nlohmann::json j = nlohmann::json::parse(in);
  auto opt = [&j](const char* key, double& field) {
    if (j.contains(key)) field = j[key].get<double>();
  };
  opt("min_fragment_ratio", cfg.min_fragment_ratio);
  opt("iof_threshold", cfg.iof_threshold);
  if (j.contains("recovery_dilation_px")) {
    cfg.recovery_dilation_px = j["recovery_dilation_px"].get<int>();
  }
  opt("cc_keep_ratio", cfg.cc_keep_ratio);
  opt("area_drop_fallback_ratio", cfg.area_drop_fallback_ratio);
  opt("dedup_box_iou", cfg.dedup_box_iou);
  opt("dedup_mask_iou", cfg.dedup_mask_iou);
  opt("saliency_min_area_ratio", cfg.saliency_min_area_ratio);
  opt("verify_iou_threshold", cfg.verify_iou_threshold);
  cfg.validate();
  return cfg;
}

inline int run_param_count(const std::string& profile,
                           const std::string& config_path, std::ostream& os) {
  DecoderConfig cfg = load_decoder_config(profile, config_path);
  DecoderParams params = build_decoder_params(cfg, 0);
  os << params.total_scalars() << "\n";
  return 0;
}

inline int run_gate_viz(const std::vector<std::string>& box_specs, int width,
                        int height, double alpha, double enlarge,
                        const std::string& out_path, std::ostream& os) {
  std::vector<Box> boxes;
  for (const std::string& spec : box_specs) {
    std::istringstream ss(spec);
    double v[4];
    char comma;
    if (!(ss >> v[0] >> comma >> v[1] >> comma >> v[2] >> comma >> v[3])) {
      throw ConfigError("bad --box, expected x1,y1,x2,y2: " + spec);
    }
    boxes.emplace_back(v[0], v[1], v[2], v[3]);
  }
  GateField gate = rasterize_box_gates(boxes, height, width, alpha, enlarge);
  std::vector<uint8_t> gray(gate.values.data().size());
  for (size_t i = 0; i < gray.size(); ++i) {
    gray[i] = static_cast<uint8_t>(
        std::lround(gate.values.data()[i] * 255.0));
  }
  write_pgm(out_path, gray, width, height);
  os << "wrote " << out_path << "\n";
  return 0;
}

inline int run_parse_output(const std::string& in_path, std::ostream& os) {
  std::string text;
  if (in_path == "-") {
    std::ostringstream buf;
    buf << std::cin.rdbuf();
    text = buf.str();
  } else {
    std::ifstream in(in_path);
    if (!in) throw ConfigError("cannot open input: " + in_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  auto records = parse_model_output(text);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) {
    arr.push_back({{"bbox_2d", r.bbox_2d}, {"label", r.label},
                   {"mask", r.mask}});
  }
  os << arr.dump(2) << "\n";
  return 0;
}

inline int run_eval(const std::string& pred_path, const std::string& gt_path,
                    const std::string& report_path, bool multi, int coord_grid,
                    std::ostream& os) {
  for (const std::string& p : {pred_path, gt_path}) {
    if (!std::filesystem::exists(p)) {
      throw ConfigError("manifest not found: " + p);
    }
  }
  const std::string pred_dir =
      std::filesystem::path(pred_path).parent_path().string();
  const std::string gt_dir =
      std::filesystem::path(gt_path).parent_path().string();
  auto preds = load_eval_manifest(pred_path, pred_dir);
  auto gts = load_eval_manifest(gt_path, gt_dir);
  EvalOptions opt;
  opt.multi_instance = multi;
  opt.coord_grid = coord_grid;
  EvalReport report = evaluate_manifests(preds, gts, opt);
  nlohmann::json j = report.to_json();
  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report: " + report_path);
  out << j.dump(2) << "\n";
  os << "miou=" << j["miou"] << " ciou=" << j["ciou"] << " matched="
     << j["matched"] << " unmatched=" << j["unmatched"] << "\n";
  return 0;
}

inline int run_merge_masks(const std::string& manifest_path,
                           const std::string& config_path,
                           const std::string& out_dir, bool verify,
                           const std::string& grounder_fixtures,
                           std::ostream& os) {
  if (!std::filesystem::exists(manifest_path)) {
    throw ConfigError("manifest not found: " + manifest_path);
  }
  FusionConfig cfg = load_fusion_config(config_path);
  std::ifstream in(manifest_path);
  nlohmann::json manifest = nlohmann::json::parse(in);
  const std::string base_dir =
      std::filesystem::path(manifest_path).parent_path().string();
  auto candidates = parse_fusion_manifest(manifest, base_dir);

  std::unique_ptr<StubGrounder> grounder;
  if (verify) {
    if (grounder_fixtures.empty()) {
      throw ConfigError("--verify requires --grounder-fixtures");
    }
    grounder = std::make_unique<StubGrounder>(grounder_fixtures);
  }
  PipelineResult res =
      run_pipeline(std::move(candidates), cfg, grounder.get());

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream curated(out_dir + "/curated.json", std::ios::trunc);
    curated << res.curated_manifest().dump(2) << "\n";
  }
  {
    std::ofstream audit(out_dir + "/audit.json", std::ios::trunc);
    audit << res.audit.to_json().dump(2) << "\n";
  }
  os << "kept=" << res.audit.kept << " duplicates=" << res.audit.duplicates
     << " rejected=" << res.audit.saliency_rejected + res.audit.verify_rejected
     << " errors=" << res.audit.errors << "\n";
  return 0;
}

inline int run_train_toy(const std::string& out_dir, const std::string& profile,
                         int steps, int batch, uint64_t seed, double lr,
                         int eval_every, int final_eval, double early_stop,
                         const std::string& resume, std::ostream& os) {
  TrainConfig cfg;
  cfg.decoder = profile_config(profile);
  cfg.max_steps = steps;
  cfg.batch_size = batch;
  cfg.train_seed = seed;
  cfg.lr = lr;
  cfg.eval_every = eval_every;
  cfg.final_eval_count = final_eval;
  cfg.early_stop_miou = early_stop;
  cfg.out_dir = out_dir;
  TrainResult res = train_loop(cfg, resume);
  os << "steps=" << res.steps_run << " loss=" << res.final_loss
     << " miou_pass1=" << res.final_eval.miou_pass1
     << " miou_pass2=" << res.final_eval.miou_pass2
     << " iou_head_mae=" << res.final_eval.iou_head_mae << "\n"
     << "checkpoint=" << res.checkpoint_path << "\n"
     << "metrics=" << res.metrics_path << "\n";
  return 0;
}

// Entry point shared by the binary and in-process tests.
// Exit codes: 0 success, 2 validation/usage error, 1 runtime error.
inline int cli_main(int argc, const char* const* argv,
                    std::ostream& os = std::cout) {
  CLI::App app{"box-guided referring-segmentation toolkit"};
  app.require_subcommand(1);

  auto* sc_param = app.add_subcommand("param-count",
                                      "print the exact trainable-scalar count");
  std::string pc_profile = "default", pc_config;
  sc_param->add_option("--profile", pc_profile, "default or tiny");
  sc_param->add_option("--config", pc_config, "JSON config overrides");

  auto* sc_gate = app.add_subcommand("gate-viz",
                                     "render a soft box gate to a PGM");
  std::vector<std::string> gv_boxes;
  int gv_w = 64, gv_h = 64;
  double gv_alpha = 20.0, gv_enlarge = 0.0;
  std::string gv_out;
  sc_gate->add_option("--box", gv_boxes, "x1,y1,x2,y2 normalized")->required();
  sc_gate->add_option("--width", gv_w);
  sc_gate->add_option("--height", gv_h);
  sc_gate->add_option("--alpha", gv_alpha);
  sc_gate->add_option("--enlarge", gv_enlarge, "enlargement ratio");
  sc_gate->add_option("--out", gv_out)->required();

  auto* sc_parse = app.add_subcommand("parse-output",
                                      "parse structured model output");
  std::string po_in = "-";
  sc_parse->add_option("--in", po_in, "input file or - for stdin");

  auto* sc_eval = app.add_subcommand("eval", "score prediction manifests");
  std::string ev_pred, ev_gt, ev_report = "report.json";
  bool ev_multi = false;
  int ev_grid = 0;
  sc_eval->add_option("--pred-manifest", ev_pred)->required();
  sc_eval->add_option("--gt-manifest", ev_gt)->required();
  sc_eval->add_option("--report", ev_report);
  sc_eval->add_flag("--multi", ev_multi, "multi-instance Hungarian protocol");
  sc_eval->add_option("--coord-grid", ev_grid,
                      "boxes on a 0..N-1 grid instead of pixels");

  auto* sc_merge = app.add_subcommand("merge-masks",
                                      "coarse-to-fine mask curation pipeline");
  std::string mm_manifest, mm_config, mm_out = "merged";
  bool mm_verify = false;
  std::string mm_fixtures;
  sc_merge->add_option("--manifest", mm_manifest)->required();
  sc_merge->add_option("--config", mm_config, "fusion config JSON");
  sc_merge->add_option("--out", mm_out)->required();
  sc_merge->add_flag("--verify", mm_verify, "run the cognitive-verification gate");
  sc_merge->add_option("--grounder-fixtures", mm_fixtures,
                       "stub grounder responses JSON");

  auto* sc_train = app.add_subcommand("train-toy",
                                      "train the decoder on synthetic scenes");
  std::string tt_out = "toy_run", tt_profile = "tiny", tt_resume;
  int tt_steps = 5000, tt_batch = 4, tt_eval_every = 200, tt_final = 200;
  uint64_t tt_seed = 17;
  double tt_lr = 1e-3, tt_early = 0.93;
  sc_train->add_option("--out", tt_out);
  sc_train->add_option("--profile", tt_profile);
  sc_train->add_option("--steps", tt_steps);
  sc_train->add_option("--batch", tt_batch);
  sc_train->add_option("--seed", tt_seed);
  sc_train->add_option("--lr", tt_lr);
  sc_train->add_option("--eval-every", tt_eval_every);
  sc_train->add_option("--final-eval", tt_final);
  sc_train->add_option("--early-stop", tt_early);
  sc_train->add_option("--resume", tt_resume, "checkpoint to continue from");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    os << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    os << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*sc_param) return run_param_count(pc_profile, pc_config, os);
    if (*sc_gate) {
      return run_gate_viz(gv_boxes, gv_w, gv_h, gv_alpha, gv_enlarge, gv_out,
                          os);
    }
    if (*sc_parse) return run_parse_output(po_in, os);
    if (*sc_eval) {
      return run_eval(ev_pred, ev_gt, ev_report, ev_multi, ev_grid, os);
    }
    if (*sc_merge) {
      return run_merge_masks(mm_manifest, mm_config, mm_out, mm_verify,
                             mm_fixtures, os);
    }
    if (*sc_train) {
      return run_train_toy(tt_out, tt_profile, tt_steps, tt_batch, tt_seed,
                           tt_lr, tt_eval_every, tt_final, tt_early, tt_resume,
                           os);
    }
  } catch (const ConfigError& e) {
    os << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    os << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    os << "error: " << e.what() << "\n";
    return 2;
  } catch (const SchemaError& e) {
    os << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    os << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    os << "runtime error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace cli
}  // namespace boxseg
