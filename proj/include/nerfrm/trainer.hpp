#pragma once

#include <map>
#include <string>
#include <vector>

#include "nerfrm/objective.hpp"
#include "nerfrm/scene.hpp"

namespace nerfrm {

struct TrainConfig {
  int k_outer = 4;          // view-selection iterations
  int k_grad = 50000;       // gradient steps per iteration
  double lr = 0.0005;
  double lr_uncertainty = 0.0005;  // per-image uncertainty variables; raise for
                                   // short desk-scale schedules so confidences
                                   // reach their equilibria
  int warmup_steps = 500;
  int batch_size = 1024;
  int samples_per_ray = 64;
  double masked_fraction = 0.5;  // share of each batch forced onto masked pixels
  uint64_t seed = 1;
  LossWeights loss;
  MlpConfig mlp;
  std::string view_selection = "confidence";  // confidence | all | tenth | fiftieth | single
  int log_every = 50;
  int threads = 0;  // 0 = all hardware threads
};

TrainConfig load_train_config(const std::string& path);  // flat key=value file
void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value);

struct AdamState {
  std::vector<Array> m, v;
  int64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void reset(const std::vector<Array*>& params);
};

// Standard Adam update with bias correction. `row_filter`, when non-null,
// restricts the update of single-column parameters to the listed rows (used
// for the per-image uncertainties of the active set).
void adam_step(const std::vector<Array*>& params, const std::vector<const Array*>& grads,
               AdamState& state, double lr, const std::vector<int>* row_filter = nullptr);

// Warmup-scaled exponential decay from lr0 to lr0/10 across total_steps.
double lr_schedule(int64_t step, int64_t total_steps, double lr0, int warmup_steps);

struct PruneResult {
  std::vector<int> kept;
  std::vector<int> removed;
  double median = 1.0;
};

// Interpolated median of the given confidences; frames strictly below the
// median are removed. Never empties the set: the top-confidence frame is kept
// as a last resort.
PruneResult prune_active_set(const std::vector<std::pair<int, double>>& confidences);

struct OuterRecord {
  int iteration = 0;
  std::vector<int> active_before, active_after;
  double median_confidence = 1.0;
  std::map<int, double> confidence;  // per train frame, at prune time
};

struct TrainResult {
  FieldParams params;
  std::vector<int> final_active;
  std::vector<OuterRecord> history;
};

// Iterative refinement: K_outer rounds of (re-initialize MLP, K_grad Adam
// steps over MLP + active-set uncertainties, median-confidence prune).
// Uncertainties and their optimizer state persist across rounds. When
// `out_dir` is non-empty, writes log.csv, per-round and final checkpoints,
// and summary.json.
TrainResult run_training(const TrainConfig& cfg, const SceneDataset& scene,
                         const std::string& out_dir);

}  // namespace nerfrm
