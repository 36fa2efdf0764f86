#include "nerfrm/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace nerfrm {

void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
  auto as_int = [&] { return std::stoi(value); };
  auto as_double = [&] { return std::stod(value); };
  if (key == "k_outer") cfg.k_outer = as_int();
  else if (key == "k_grad") cfg.k_grad = as_int();
  else if (key == "lr") cfg.lr = as_double();
  else if (key == "lr_uncertainty") cfg.lr_uncertainty = as_double();
  else if (key == "warmup_steps") cfg.warmup_steps = as_int();
  else if (key == "batch_size") cfg.batch_size = as_int();
  else if (key == "samples_per_ray") cfg.samples_per_ray = as_int();
  else if (key == "masked_fraction") cfg.masked_fraction = as_double();
  else if (key == "seed") cfg.seed = static_cast<uint64_t>(std::stoull(value));
  else if (key == "lambda_rgb") cfg.loss.rgb = as_double();
  else if (key == "lambda_depth") cfg.loss.depth = as_double();
  else if (key == "lambda_reg") cfg.loss.reg = as_double();
  else if (key == "lambda_dist") cfg.loss.dist = as_double();
  else if (key == "trunk_depth") cfg.mlp.trunk_depth = as_int();
  else if (key == "trunk_width") cfg.mlp.trunk_width = as_int();
  else if (key == "head_depth") cfg.mlp.head_depth = as_int();
  else if (key == "head_width") cfg.mlp.head_width = as_int();
  else if (key == "enc_levels_pos") cfg.mlp.enc_levels_pos = as_int();
  else if (key == "enc_levels_dir") cfg.mlp.enc_levels_dir = as_int();
  else if (key == "skip_layer") cfg.mlp.skip_layer = as_int();
  else if (key == "view_selection") cfg.view_selection = value;
  else if (key == "log_every") cfg.log_every = as_int();
  else if (key == "threads") cfg.threads = as_int();
  else NERFRM_CHECK(false, "unknown config key: " << key);
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream is(path);
  NERFRM_CHECK(is.good(), "cannot read config: " << path);
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      NERFRM_CHECK(blank, "malformed config line " << lineno << ": " << line);
      continue;
    }
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void AdamState::reset(const std::vector<Array*>& params) {
  m.clear();
  v.clear();
  for (const Array* p : params) {
    m.emplace_back(p->rows, p->cols);
    v.emplace_back(p->rows, p->cols);
  }
  step = 0;
}

void adam_step(const std::vector<Array*>& params, const std::vector<const Array*>& grads,
               AdamState& state, double lr, const std::vector<int>* row_filter) {
  NERFRM_CHECK(params.size() == grads.size() && params.size() == state.m.size(),
               "adam state/parameter mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    Array& theta = *params[p];
    const Array& g = *grads[p];
    NERFRM_CHECK(theta.same_shape(g) || g.size() == 0, "gradient shape mismatch in adam_step");
    Array& m = state.m[p];
    Array& v = state.v[p];
    auto update_index = [&](int64_t i) {
      double gi = g.size() == 0 ? 0.0 : g.v[i];
      m.v[i] = state.beta1 * m.v[i] + (1.0 - state.beta1) * gi;
      v.v[i] = state.beta2 * v.v[i] + (1.0 - state.beta2) * gi * gi;
      double mhat = m.v[i] / bc1;
      double vhat = v.v[i] / bc2;
      theta.v[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    };
    if (row_filter) {
      NERFRM_CHECK(theta.cols == 1, "row-filtered adam expects column parameters");
      for (int r : *row_filter) update_index(r);
    } else {
      for (int64_t i = 0; i < theta.size(); ++i) update_index(i);
    }
  }
}

double lr_schedule(int64_t step, int64_t total_steps, double lr0, int warmup_steps) {
  NERFRM_CHECK(step >= 0 && step <= total_steps, "step outside schedule range");
  double decay = std::pow(0.1, static_cast<double>(step) / static_cast<double>(total_steps));
  double warm = warmup_steps > 0
                    ? std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup_steps))
                    : 1.0;
  return lr0 * decay * warm;
}

PruneResult prune_active_set(const std::vector<std::pair<int, double>>& confidences) {
  NERFRM_CHECK(!confidences.empty(), "prune requires a non-empty active set");
  std::vector<double> sorted;
  sorted.reserve(confidences.size());
  for (const auto& [frame, conf] : confidences) sorted.push_back(conf);
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  double median = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

  PruneResult out;
  out.median = median;
  for (const auto& [frame, conf] : confidences) {
    if (conf < median)
      out.removed.push_back(frame);
    else
      out.kept.push_back(frame);
  }
  if (out.kept.empty()) {
    // unreachable for finite confidences; keep the best frame regardless
    auto best = std::max_element(confidences.begin(), confidences.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    out.kept.push_back(best->first);
    out.removed.erase(std::remove(out.removed.begin(), out.removed.end(), best->first),
                      out.removed.end());
    std::cerr << "warning: median prune would empty the active set; keeping frame " << best->first
              << "\n";
  }
  return out;
}

namespace {

// Flatten tape handles in the exact order of FieldParams::for_each_param.
std::vector<ad::Var> flatten_vars(const FieldVars& vars) {
  std::vector<ad::Var> out;
  for (size_t l = 0; l < vars.trunk_w.size(); ++l) {
    out.push_back(vars.trunk_w[l]);
    out.push_back(vars.trunk_b[l]);
  }
  out.push_back(vars.density_w);
  out.push_back(vars.density_b);
  for (size_t l = 0; l < vars.color_w.size(); ++l) {
    out.push_back(vars.color_w[l]);
    out.push_back(vars.color_b[l]);
  }
  for (size_t l = 0; l < vars.mv_w.size(); ++l) {
    out.push_back(vars.mv_w[l]);
    out.push_back(vars.mv_b[l]);
  }
  out.push_back(vars.u_raw);
  return out;
}

struct PixelLists {
  // per frame: packed r*W+c of admissible pixels
  std::vector<std::vector<int32_t>> unmasked;  // all train frames
  std::vector<std::vector<int32_t>> masked;    // active train frames with inpaintings
  std::vector<int64_t> unmasked_prefix, masked_prefix;  // cumulative counts
  int64_t unmasked_total = 0, masked_total = 0;
  std::vector<int> frame_of_unmasked_slot, frame_of_masked_slot;
};

PixelLists build_pixel_lists(const SceneDataset& scene, const std::vector<int>& train,
                             const std::vector<int>& active) {
  PixelLists lists;
  std::vector<uint8_t> is_active(scene.frame_count(), 0);
  for (int n : active) is_active[n] = 1;

  for (int n : train) {
    const Frame& f = scene.frames[n];
    std::vector<int32_t> um;
    um.reserve(f.mask.v.size());
    for (int r = 0; r < scene.height; ++r)
      for (int c = 0; c < scene.width; ++c)
        if (!f.mask.at(r, c)) um.push_back(r * scene.width + c);
    if (!um.empty()) {
      lists.unmasked_total += static_cast<int64_t>(um.size());
      lists.unmasked.push_back(std::move(um));
      lists.unmasked_prefix.push_back(lists.unmasked_total);
      lists.frame_of_unmasked_slot.push_back(n);
    }
    if (is_active[n] && f.inpaint_rgb && f.inpaint_depth) {
      std::vector<int32_t> mk;
      for (int r = 0; r < scene.height; ++r)
        for (int c = 0; c < scene.width; ++c)
          if (f.mask.at(r, c)) mk.push_back(r * scene.width + c);
      if (!mk.empty()) {
        lists.masked_total += static_cast<int64_t>(mk.size());
        lists.masked.push_back(std::move(mk));
        lists.masked_prefix.push_back(lists.masked_total);
        lists.frame_of_masked_slot.push_back(n);
      }
    }
  }
  return lists;
}

PixelCoord pick_pixel(const PixelLists& lists, bool masked, int64_t index, int width) {
  const auto& prefix = masked ? lists.masked_prefix : lists.unmasked_prefix;
  const auto& slots = masked ? lists.masked : lists.unmasked;
  const auto& frame_of = masked ? lists.frame_of_masked_slot : lists.frame_of_unmasked_slot;
  size_t slot = std::upper_bound(prefix.begin(), prefix.end(), index) - prefix.begin();
  int64_t base = slot == 0 ? 0 : prefix[slot - 1];
  int32_t packed = slots[slot][index - base];
  return PixelCoord{frame_of[slot], packed / width, packed % width};
}

struct StepLoss {
  double rgb = 0, rgb_mv = 0, depth = 0, reg = 0, dist = 0, total = 0;
};

}  // namespace

TrainResult run_training(const TrainConfig& cfg, const SceneDataset& scene,
                         const std::string& out_dir) {
  NERFRM_CHECK(cfg.k_outer >= 1 && cfg.k_grad >= 1 && cfg.lr > 0, "invalid train config");
  NERFRM_CHECK(!scene.frames.empty(), "empty dataset");
  NERFRM_CHECK(!scene.train_idx.empty(), "empty train split");
  if (cfg.threads > 0) ThreadPool::instance().set_threads(cfg.threads);

  const bool confidence_mode = cfg.view_selection == "confidence";
  std::vector<int> train = scene.train_idx;
  std::sort(train.begin(), train.end());

  // initial active set: every train frame, or a fixed baseline subset
  std::vector<int> active;
  if (confidence_mode || cfg.view_selection == "all") {
    active = train;
  } else {
    std::vector<uint8_t> in_train(scene.frame_count(), 0);
    for (int n : train) in_train[n] = 1;
    for (int n : ablation_subset(scene.frame_count(), cfg.view_selection))
      if (in_train[n]) active.push_back(n);
    NERFRM_CHECK(!active.empty(), "baseline subset contains no train frames");
  }

  MlpConfig mlp = cfg.mlp;
  mlp.frames = scene.frame_count();
  FieldParams params = init_field(mlp, scene.bounds, Rng::keyed(cfg.seed, kRngInit, 0).next_u64());
  const Aabb bounds{params.scene_lo, params.scene_hi};
  std::vector<Camera> cams = scene.cameras();

  std::ofstream log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log.open(fs::path(out_dir) / "log.csv", std::ios::trunc);
    log << "outer,step,lr,rgb,rgb_mv,depth,reg,dist,total,active_count,conf_min,conf_median,conf_max\n";
  }

  // uncertainty optimizer state persists across outer iterations
  std::vector<Array*> u_params{&params.u_raw};
  AdamState u_adam;
  u_adam.reset(u_params);

  TrainResult result;

  for (int outer = 0; outer < cfg.k_outer; ++outer) {
    reinit_mlp(params, Rng::keyed(cfg.seed, kRngInit, 1 + outer).next_u64());

    std::vector<Array*> theta;
    params.for_each_param([&](const std::string& name, Array& a) {
      if (name != "u_raw") theta.push_back(&a);
    });
    AdamState theta_adam;
    theta_adam.reset(theta);

    PixelLists lists = build_pixel_lists(scene, train, active);
    NERFRM_CHECK(lists.unmasked_total > 0, "no unmasked supervision available");
    const double admissible = static_cast<double>(lists.unmasked_total + lists.masked_total);

    int batch_masked = 0;
    if (lists.masked_total > 0)
      batch_masked = std::min<int>(cfg.batch_size,
                                   static_cast<int>(std::lround(cfg.batch_size * cfg.masked_fraction)));
    const int batch_unmasked = cfg.batch_size - batch_masked;

    for (int step = 0; step < cfg.k_grad; ++step) {
      Rng batch_rng = Rng::keyed(cfg.seed, kRngBatch, static_cast<uint64_t>(outer),
                                 static_cast<uint64_t>(step));
      PixelBatch batch;
      batch.pixels.reserve(cfg.batch_size);
      for (int i = 0; i < batch_unmasked; ++i) {
        int64_t idx = static_cast<int64_t>(batch_rng.uniform_int(lists.unmasked_total));
        batch.pixels.push_back(pick_pixel(lists, false, idx, scene.width));
        batch.masked.push_back(0);
      }
      for (int i = 0; i < batch_masked; ++i) {
        int64_t idx = static_cast<int64_t>(batch_rng.uniform_int(lists.masked_total));
        batch.pixels.push_back(pick_pixel(lists, true, idx, scene.width));
        batch.masked.push_back(1);
      }
      const int B = batch.size();
      batch.pixel_scale = admissible / B;

      RayBatch rays = build_ray_batch(cams, batch.pixels, bounds, cfg.samples_per_ray, cfg.seed,
                                      (static_cast<uint64_t>(outer) << 32) ^
                                          static_cast<uint64_t>(step));

      batch.target_rgb = Array(B, 3);
      batch.target_t = Array(B, 1);
      batch.depth_valid = Array(B, 1);
      for (int b = 0; b < B; ++b) {
        const PixelCoord& px = batch.pixels[b];
        const Frame& f = scene.frames[px.frame];
        const Image& rgb_src = batch.masked[b] ? *f.inpaint_rgb : f.rgb;
        const DepthMap& depth_src = batch.masked[b] ? *f.inpaint_depth : f.depth;
        for (int c = 0; c < 3; ++c) batch.target_rgb.at(b, c) = rgb_src.at(px.row, px.col, c);
        double z = depth_src.at(px.row, px.col);
        if (z > 0.0) {
          batch.target_t.v[b] = z * rays.z_to_ray[b];  // z-depth -> ray distance
          batch.depth_valid.v[b] = 1.0;
        }
      }

      ad::Tape tape;
      FieldVars vars = bind_field(tape, params, true);
      FieldOutputs field = field_forward(tape, vars, params, rays.positions, rays.dirs);
      RenderedBatch rendered = composite_for_loss(tape, rays, field, batch);
      LossTerms terms = assemble_loss(tape, batch, rendered, vars.u_raw, active, cfg.loss);

      StepLoss losses;
      losses.rgb = tape.value(terms.rgb).v[0];
      losses.rgb_mv = tape.value(terms.rgb_mv).v[0];
      losses.depth = tape.value(terms.depth).v[0];
      losses.reg = tape.value(terms.reg).v[0];
      losses.dist = tape.value(terms.dist).v[0];
      losses.total = tape.value(terms.total).v[0];
      for (auto [name, value] :
           {std::pair<const char*, double>{"rgb", losses.rgb},
            {"rgb_mv", losses.rgb_mv},
            {"depth", losses.depth},
            {"reg", losses.reg},
            {"dist", losses.dist}}) {
        if (!std::isfinite(value)) {
          if (!out_dir.empty())
            save_checkpoint(params, (fs::path(out_dir) / "ckpt_abort.bin").string());
          NERFRM_CHECK(false, "training diverged: loss component '"
                                  << name << "' is not finite at outer " << outer << " step "
                                  << step);
        }
      }

      tape.backward(terms.total);
      std::vector<ad::Var> handles = flatten_vars(vars);
      std::vector<Array> grad_store;
      grad_store.reserve(handles.size());
      for (ad::Var h : handles) grad_store.push_back(tape.grad(h));

      std::vector<const Array*> theta_grads;
      for (size_t i = 0; i + 1 < grad_store.size(); ++i) theta_grads.push_back(&grad_store[i]);
      adam_step(theta, theta_grads, theta_adam,
                lr_schedule(step, cfg.k_grad, cfg.lr, cfg.warmup_steps));
      if (confidence_mode && lists.masked_total > 0) {
        std::vector<const Array*> u_grads{&grad_store.back()};
        adam_step(u_params, u_grads, u_adam,
                  lr_schedule(step, cfg.k_grad, cfg.lr_uncertainty, cfg.warmup_steps), &active);
      }

      if (log.is_open() && (step % cfg.log_every == 0 || step + 1 == cfg.k_grad)) {
        std::vector<double> confs;
        for (int n : active) confs.push_back(params.confidence(n));
        std::sort(confs.begin(), confs.end());
        double cmin = confs.front(), cmax = confs.back();
        double cmed = confs.size() % 2 ? confs[confs.size() / 2]
                                       : 0.5 * (confs[confs.size() / 2 - 1] + confs[confs.size() / 2]);
        log << outer << ',' << step << ','
            << lr_schedule(step, cfg.k_grad, cfg.lr, cfg.warmup_steps) << ',' << losses.rgb << ','
            << losses.rgb_mv << ',' << losses.depth << ',' << losses.reg << ',' << losses.dist
            << ',' << losses.total << ',' << active.size() << ',' << cmin << ',' << cmed << ','
            << cmax << '\n';
      }
    }

    OuterRecord record;
    record.iteration = outer;
    record.active_before = active;
    for (int n : train) record.confidence[n] = params.confidence(n);
    std::vector<std::pair<int, double>> confs;
    for (int n : active) confs.emplace_back(n, params.confidence(n));
    if (confidence_mode) {
      PruneResult pruned = prune_active_set(confs);
      std::sort(pruned.kept.begin(), pruned.kept.end());
      active = pruned.kept;
      record.median_confidence = pruned.median;
    }
    record.active_after = active;
    result.history.push_back(record);

    if (!out_dir.empty())
      save_checkpoint(params,
                      (fs::path(out_dir) / ("ckpt_outer_" + std::to_string(outer) + ".bin")).string());
  }

  result.params = std::move(params);
  result.final_active = active;

  if (!out_dir.empty()) {
    save_checkpoint(result.params, (fs::path(out_dir) / "final.bin").string());
    ordered_json summary;
    summary["k_outer"] = cfg.k_outer;
    summary["k_grad"] = cfg.k_grad;
    summary["seed"] = cfg.seed;
    summary["view_selection"] = cfg.view_selection;
    summary["final_active_set"] = result.final_active;
    ordered_json per_frame = ordered_json::object();
    for (int n = 0; n < result.params.u_raw.rows; ++n)
      per_frame[std::to_string(n)] = result.params.confidence(n);
    summary["confidence"] = per_frame;
    ordered_json hist = ordered_json::array();
    for (const OuterRecord& rec : result.history) {
      ordered_json h;
      h["iteration"] = rec.iteration;
      h["active_before"] = rec.active_before;
      h["active_after"] = rec.active_after;
      h["median_confidence"] = rec.median_confidence;
      ordered_json c = ordered_json::object();
      for (const auto& [n, conf] : rec.confidence) c[std::to_string(n)] = conf;
      h["confidence"] = c;
      hist.push_back(h);
    }
    summary["history"] = hist;
    std::ofstream os(fs::path(out_dir) / "summary.json");
    os << summary.dump(2) << "\n";
  }
  return result;
}

}  // namespace nerfrm
