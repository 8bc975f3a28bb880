#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fuseg/affine.hpp"
#include "fuseg/folds.hpp"
#include "fuseg/manifest.hpp"
#include "fuseg/metrics.hpp"
#include "fuseg/nn/checkpoint.hpp"
#include "fuseg/nn/loss.hpp"

namespace fuseg {

struct TrainConfig {
  int epochs = 80;
  double initial_lr = 1e-4;
  double lr_decay = 0.1;
  int lr_step = 10;      // epochs between decays
  double lr_floor = 1e-6;
  int batch_size = 2;
  nn::LossKind loss = nn::LossKind::kDiceBce;
  bool augment = false;
  std::uint64_t seed = 0;
  double threshold = 0.5;   // validation / evaluation binarization
  bool standardize = true;  // train-split intensity standardization
  AffineConfig aug;

  void validate() const {
    require(epochs >= 1 && batch_size >= 1, ErrorCode::kInvalidArgument,
            "train config: epochs and batch_size must be >= 1");
    // lr_floor = 0 selects the literal unfloored decay schedule
    require(initial_lr > 0 && lr_decay > 0 && lr_decay <= 1 && lr_step >= 1 && lr_floor >= 0,
            ErrorCode::kInvalidArgument, "train config: bad learning-rate schedule");
    require(threshold > 0 && threshold < 1, ErrorCode::kInvalidArgument,
            "train config: threshold must be in (0,1)");
  }
};

// Step schedule: initial_lr * decay^(epoch / step), floored.
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochStat {
  double lr = 0.0;
  double train_loss = 0.0;
  double val_dsc = 0.0;
};

struct TrainHistory {
  std::vector<EpochStat> epochs;
  int best_epoch = -1;  // 0-based
  double best_val_dsc = 0.0;
};

// Assembles the network input for a study under the model's fusion strategy
// and normalization stats.
nn::TensorT<float> make_input(const SegModel& model, const Study& s);

// Eval-mode probability map.
Volume predict(SegModel& model, const Study& s);

double mean_validation_dice(SegModel& model, const std::vector<Study>& studies, double threshold);

// Adam + schedule + best-on-validation selection. On return the model holds
// the snapshot of the epoch with the highest validation DSC (earliest on
// ties). Late-fusion models are trained per submodel; use train_model.
TrainHistory train(SegModel& model, const std::vector<Study>& train_set,
                   const std::vector<Study>& val_set, const TrainConfig& cfg);

struct TrainOutput {
  // one history per optimization run ("model", or "bmode"/"doppler" for late fusion)
  std::vector<std::pair<std::string, TrainHistory>> histories;
};

TrainOutput train_model(SegModel& model, const std::vector<Study>& train_set,
                        const std::vector<Study>& val_set, const TrainConfig& cfg);

std::vector<MetricRecord> evaluate_studies(SegModel& model, const std::vector<Study>& studies,
                                           double threshold);

// ---- run directory ----

// Plain-text `key = value` config, one per line, '#' comments.
void write_kv_config(const std::string& path, const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> read_kv_config(const std::string& path);

std::map<std::string, std::string> to_kv(const TrainConfig& cfg);
TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv);

void write_history(const std::string& path, const TrainHistory& h);
void write_metric_records(const std::string& path, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_metric_records(const std::string& path);

// One mean+-std row in the layout of the result tables:
//   label  DSC  Jaccard  HD95(mm)  MSD(mm)
std::string format_aggregate_row(const std::string& label, const AggregateResult& a);
void write_aggregate_table(const std::string& path,
                           const std::vector<std::pair<std::string, AggregateResult>>& rows);

// ---- cross-validation driver ----

struct FoldOutcome {
  int fold = 0;
  AggregateResult test;
  std::string run_dir;
};

struct CvOutcome {
  std::vector<FoldOutcome> per_fold;
  AggregateResult pooled;  // union of all per-fold test records
};

// Trains/selects/evaluates every fold of the plan; writes one run directory
// per fold plus a cross-fold table under out_dir. extra_config entries
// (manifest/fold-plan paths, network overrides, ...) are merged into each
// fold's config.txt so the run directories stay self-describing.
CvOutcome run_cv(const DatasetManifest& manifest, const FoldPlan& plan,
                 const nn::BackboneConfig& backbone, const nn::FusionConfig& fusion,
                 const TrainConfig& cfg, const LoadOptions& load, const std::string& out_dir,
                 const std::map<std::string, std::string>& extra_config = {});

}  // namespace fuseg
