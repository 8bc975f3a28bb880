#include "fuseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fuseg/nn/optim.hpp"

namespace fuseg {
namespace {

using nn::NetMode;
using nn::TensorT;

constexpr std::uint64_t kShuffleStream = 0x73687566ULL;  // 'shuf'
constexpr std::uint64_t kAugmentStream = 0x6175676dULL;  // 'augm'
constexpr std::uint64_t kLateStream = 0x6c617465ULL;     // 'late'

Volume standardized(const Volume& v, double mean, double std_) {
  return std_ > 0 ? standardize(v, mean, std_) : v;
}

TensorT<float> target_tensor(const BinaryMask& m) {
  TensorT<float> t(1, m.shape, 1);
  t.m.row(0) = m.data.cast<float>().transpose();
  return t;
}

// Per-modality statistics over the training split (after the per-volume
// [0,1] rescale done at load time).
nn::NormStats compute_norm_stats(const std::vector<Study>& train_set) {
  nn::NormStats ns;
  ns.standardize = true;
  double sum_b = 0, sum2_b = 0, sum_d = 0, sum2_d = 0;
  long long n = 0;
  for (const auto& s : train_set) {
    sum_b += s.bmode.data.cast<double>().sum();
    sum2_b += s.bmode.data.cast<double>().array().square().sum();
    sum_d += s.doppler.data.cast<double>().sum();
    sum2_d += s.doppler.data.cast<double>().array().square().sum();
    n += s.bmode.voxels();
  }
  require(n > 0, ErrorCode::kInvalidArgument, "norm stats: empty training set");
  const auto nd = static_cast<double>(n);
  ns.bmode_mean = sum_b / nd;
  ns.doppler_mean = sum_d / nd;
  ns.bmode_std = std::sqrt(std::max(sum2_b / nd - ns.bmode_mean * ns.bmode_mean, 0.0));
  ns.doppler_std = std::sqrt(std::max(sum2_d / nd - ns.doppler_mean * ns.doppler_mean, 0.0));
  if (ns.bmode_std <= 0) ns.bmode_std = 1.0;
  if (ns.doppler_std <= 0) ns.doppler_std = 1.0;
  return ns;
}

const Volume& pick_modality(const SegModel& model, const Study& s) {
  return model.fusion.modality == nn::Modality::kDoppler ? s.doppler : s.bmode;
}

}  // namespace

double lr_at(int epoch, const TrainConfig& cfg) {
  require(epoch >= 0, ErrorCode::kInvalidArgument, "lr_at: epoch must be >= 0");
  const double lr = cfg.initial_lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_step));
  return std::max(lr, cfg.lr_floor);
}

nn::TensorT<float> make_input(const SegModel& model, const Study& s) {
  const auto& ns = model.norm;
  if (model.fusion.strategy == nn::FusionStrategy::kSingleModality) {
    Volume v = pick_modality(model, s);
    if (ns.standardize)
      v = standardized(v, model.fusion.modality == nn::Modality::kDoppler ? ns.doppler_mean : ns.bmode_mean,
                       model.fusion.modality == nn::Modality::kDoppler ? ns.doppler_std : ns.bmode_std);
    return TensorT<float>::from_volumes<float>({&v});
  }
  Volume b = s.bmode, d = s.doppler;
  if (ns.standardize) {
    b = standardized(b, ns.bmode_mean, ns.bmode_std);
    d = standardized(d, ns.doppler_mean, ns.doppler_std);
  }
  return TensorT<float>::from_volumes<float>({&b, &d});
}

Volume predict(SegModel& model, const Study& s) {
  const auto out = model.forward(make_input(model, s), NetMode::kEval);
  return out.to_volume(s.bmode.spacing);
}

double mean_validation_dice(SegModel& model, const std::vector<Study>& studies, double threshold) {
  require(!studies.empty(), ErrorCode::kInvalidArgument, "validation: empty study set");
  double acc = 0.0;
  for (const auto& s : studies) {
    const BinaryMask pred = binarize(predict(model, s), threshold);
    acc += dice(pred, s.mask);
  }
  return acc / static_cast<double>(studies.size());
}

TrainHistory train(SegModel& model, const std::vector<Study>& train_set,
                   const std::vector<Study>& val_set, const TrainConfig& cfg) {
  cfg.validate();
  require(!train_set.empty() && !val_set.empty(), ErrorCode::kInvalidArgument,
          "train: empty train or validation set");
  require(model.fusion.strategy != nn::FusionStrategy::kLate, ErrorCode::kInvalidArgument,
          "train: late fusion is trained per submodel (use train_model)");

  if (cfg.standardize && !model.norm.standardize) model.norm = compute_norm_stats(train_set);

  nn::AdamT<float> adam;
  const auto trainable = model.graph.trainable_params();
  const auto all_params = model.graph.params();

  TrainHistory history;
  std::vector<typename nn::ParamT<float>::Matrix> snapshot;
  auto take_snapshot = [&] {
    snapshot.clear();
    snapshot.reserve(all_params.size());
    for (auto* p : all_params) snapshot.push_back(p->value);
  };

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    Rng shuffle_rng(Rng::stream(cfg.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int n_samples = 0;
    for (std::size_t pos = 0; pos < order.size();) {
      const int bn = static_cast<int>(std::min<std::size_t>(cfg.batch_size, order.size() - pos));
      model.graph.zero_grads();
      for (int k = 0; k < bn; ++k, ++pos) {
        const Study* s = &train_set[order[pos]];
        Study augmented;
        if (cfg.augment) {
          Rng aug_rng(Rng::stream(cfg.seed ^ kAugmentStream, static_cast<std::uint64_t>(epoch),
                                  static_cast<std::uint64_t>(order[pos])));
          augmented = apply_affine(*s, sample_affine(cfg.aug, aug_rng));
          s = &augmented;
        }
        const auto input = make_input(model, *s);
        const auto pred = model.forward(input, NetMode::kTrain);
        auto lv = nn::segmentation_loss(pred, target_tensor(s->mask), cfg.loss);
        if (!std::isfinite(lv.value))
          fail(ErrorCode::kInternal, "train: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", sample " + std::to_string(pos) + ", lr " + std::to_string(lr));
        loss_sum += lv.value;
        ++n_samples;
        lv.grad.m *= 1.0f / static_cast<float>(bn);
        model.graph.backward(model.final_output, lv.grad);
      }
      adam.step(trainable, lr);
    }

    const double val_dsc = mean_validation_dice(model, val_set, cfg.threshold);
    history.epochs.push_back({lr, loss_sum / std::max(n_samples, 1), val_dsc});
    if (history.best_epoch < 0 || val_dsc > history.best_val_dsc) {
      history.best_epoch = epoch;
      history.best_val_dsc = val_dsc;
      take_snapshot();
    }
  }

  // restore the best-on-validation parameter snapshot
  for (std::size_t i = 0; i < all_params.size(); ++i) all_params[i]->value = snapshot[i];
  return history;
}

TrainOutput train_model(SegModel& model, const std::vector<Study>& train_set,
                        const std::vector<Study>& val_set, const TrainConfig& cfg) {
  TrainOutput out;
  if (model.fusion.strategy != nn::FusionStrategy::kLate) {
    out.histories.emplace_back("model", train(model, train_set, val_set, cfg));
    return out;
  }

  // Late fusion: two independent single-modality models, each trained and
  // selected on its own validation score, then copied into the fused graph.
  if (cfg.standardize) model.norm = compute_norm_stats(train_set);
  for (int sub = 0; sub < 2; ++sub) {
    nn::FusionConfig f;
    f.strategy = nn::FusionStrategy::kSingleModality;
    f.modality = sub == 0 ? nn::Modality::kBmode : nn::Modality::kDoppler;
    SegModel single = nn::build_model<float>(model.backbone, f,
                                             Rng::stream(cfg.seed, kLateStream, static_cast<std::uint64_t>(sub)));
    single.norm = model.norm;
    out.histories.emplace_back(nn::to_string(f.modality), train(single, train_set, val_set, cfg));

    const auto src = single.graph.params();
    auto& dst = model.param_groups[static_cast<std::size_t>(sub)];
    require(src.size() == dst.size(), ErrorCode::kInternal, "late fusion: param group mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
      require(src[i]->value.rows() == dst[i]->value.rows() &&
                  src[i]->value.cols() == dst[i]->value.cols(),
              ErrorCode::kInternal, "late fusion: param shape mismatch");
      dst[i]->value = src[i]->value;
    }
  }
  return out;
}

std::vector<MetricRecord> evaluate_studies(SegModel& model, const std::vector<Study>& studies,
                                           double threshold) {
  std::vector<MetricRecord> records;
  records.reserve(studies.size());
  for (const auto& s : studies)
    records.push_back(evaluate_study(predict(model, s), s.mask, threshold, s.study_id));
  return records;
}

// ---- run directory ----

void write_kv_config(const std::string& path, const std::map<std::string, std::string>& kv) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, path + ": cannot open for writing");
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  if (!out) fail(ErrorCode::kIo, path + ": write failed");
}

std::map<std::string, std::string> read_kv_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, path + ": cannot open config");
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::kMalformedFile,
            path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    require(!key.empty(), ErrorCode::kMalformedFile, path + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> to_kv(const TrainConfig& cfg) {
  auto num = [](double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  };
  return {
      {"epochs", std::to_string(cfg.epochs)},
      {"initial_lr", num(cfg.initial_lr)},
      {"lr_decay", num(cfg.lr_decay)},
      {"lr_step", std::to_string(cfg.lr_step)},
      {"lr_floor", num(cfg.lr_floor)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"loss", nn::to_string(cfg.loss)},
      {"augment", cfg.augment ? "1" : "0"},
      {"seed", std::to_string(cfg.seed)},
      {"threshold", num(cfg.threshold)},
      {"standardize", cfg.standardize ? "1" : "0"},
      {"aug_translation_vox", num(cfg.aug.max_translation_vox)},
      {"aug_rotation_deg", num(cfg.aug.max_rotation_deg)},
      {"aug_scale_lo", num(cfg.aug.scale_lo)},
      {"aug_scale_hi", num(cfg.aug.scale_hi)},
      {"aug_shear_vox", num(cfg.aug.max_shear_vox)},
  };
}

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig cfg;
  auto get = [&](const char* key, auto parse, auto& dst) {
    auto it = kv.find(key);
    if (it != kv.end()) dst = parse(it->second);
  };
  auto to_i = [](const std::string& s) { return std::stoi(s); };
  auto to_d = [](const std::string& s) { return std::stod(s); };
  auto to_u64 = [](const std::string& s) { return static_cast<std::uint64_t>(std::stoull(s)); };
  auto to_b = [](const std::string& s) { return s == "1" || s == "true" || s == "yes"; };

  get("epochs", to_i, cfg.epochs);
  get("initial_lr", to_d, cfg.initial_lr);
  get("lr_decay", to_d, cfg.lr_decay);
  get("lr_step", to_i, cfg.lr_step);
  get("lr_floor", to_d, cfg.lr_floor);
  get("batch_size", to_i, cfg.batch_size);
  if (auto it = kv.find("loss"); it != kv.end()) cfg.loss = nn::loss_from_string(it->second);
  get("augment", to_b, cfg.augment);
  get("seed", to_u64, cfg.seed);
  get("threshold", to_d, cfg.threshold);
  get("standardize", to_b, cfg.standardize);
  get("aug_translation_vox", to_d, cfg.aug.max_translation_vox);
  get("aug_rotation_deg", to_d, cfg.aug.max_rotation_deg);
  get("aug_scale_lo", to_d, cfg.aug.scale_lo);
  get("aug_scale_hi", to_d, cfg.aug.scale_hi);
  get("aug_shear_vox", to_d, cfg.aug.max_shear_vox);
  cfg.validate();
  return cfg;
}

void write_history(const std::string& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, path + ": cannot open for writing");
  out << "epoch lr train_loss val_dsc\n";
  char buf[128];
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu %.10g %.10g %.10g\n", e, h.epochs[e].lr,
                  h.epochs[e].train_loss, h.epochs[e].val_dsc);
    out << buf;
  }
  out << "# best_epoch " << h.best_epoch << " best_val_dsc " << h.best_val_dsc << "\n";
  if (!out) fail(ErrorCode::kIo, path + ": write failed");
}

void write_metric_records(const std::string& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, path + ": cannot open for writing");
  out << "study_id dsc jaccard hd95_mm msd_mm distances_defined\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%s %.10g %.10g %.10g %.10g %d\n", r.study_id.c_str(), r.dsc,
                  r.jaccard, r.hd95_mm, r.msd_mm, r.distances_defined ? 1 : 0);
    out << buf;
  }
  if (!out) fail(ErrorCode::kIo, path + ": write failed");
}

std::vector<MetricRecord> read_metric_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, path + ": cannot open metric records");
  std::vector<MetricRecord> records;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (first) {
      first = false;
      if (line.rfind("study_id", 0) == 0) continue;
    }
    std::istringstream ss(line);
    MetricRecord r;
    int defined = 0;
    ss >> r.study_id >> r.dsc >> r.jaccard >> r.hd95_mm >> r.msd_mm >> defined;
    require(!ss.fail(), ErrorCode::kMalformedFile, path + ": bad metric row: " + line);
    r.distances_defined = defined != 0;
    records.push_back(std::move(r));
  }
  return records;
}

std::string format_aggregate_row(const std::string& label, const AggregateResult& a) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-48s %.3f ± %.3f  %.3f ± %.3f  %.3f ± %.3f  %.3f ± %.3f",
                label.c_str(), a.dsc.mean, a.dsc.std, a.jaccard.mean, a.jaccard.std, a.hd95.mean,
                a.hd95.std, a.msd.mean, a.msd.std);
  return buf;
}

void write_aggregate_table(const std::string& path,
                           const std::vector<std::pair<std::string, AggregateResult>>& rows) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, path + ": cannot open for writing");
  char hdr[256];
  std::snprintf(hdr, sizeof(hdr), "%-48s %-14s %-14s %-14s %-14s", "method", "DSC", "Jaccard",
                "HD95(mm)", "MSD(mm)");
  out << hdr << "\n";
  for (const auto& [label, agg] : rows) out << format_aggregate_row(label, agg) << "\n";
  if (!out) fail(ErrorCode::kIo, path + ": write failed");
}

// ---- cross-validation driver ----

CvOutcome run_cv(const DatasetManifest& manifest, const FoldPlan& plan,
                 const nn::BackboneConfig& backbone, const nn::FusionConfig& fusion,
                 const TrainConfig& cfg, const LoadOptions& load, const std::string& out_dir,
                 const std::map<std::string, std::string>& extra_config) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::kIo, out_dir + ": cannot create output directory");

  // one load shared by all folds
  std::map<std::string, Study> studies;
  for (const auto& e : manifest.entries) studies.emplace(e.study_id, load_study(manifest, e, load));
  auto subset = [&](const std::vector<std::string>& ids) {
    std::vector<Study> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      auto it = studies.find(id);
      require(it != studies.end(), ErrorCode::kDataIntegrity, "fold references unknown study " + id);
      out.push_back(it->second);
    }
    return out;
  };

  CvOutcome outcome;
  std::vector<MetricRecord> pooled;
  std::vector<std::pair<std::string, AggregateResult>> table;
  for (int f = 0; f < plan.n_folds(); ++f) {
    const auto& split = plan.folds[static_cast<std::size_t>(f)];
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = Rng::stream(cfg.seed, 0x6376ULL /* 'cv' */, static_cast<std::uint64_t>(f));

    SegModel model = nn::build_model<float>(backbone, fusion, fold_cfg.seed);
    const auto trained = train_model(model, subset(split.train), subset(split.val), fold_cfg);
    const auto records = evaluate_studies(model, subset(split.test), fold_cfg.threshold);

    const std::string run_dir = out_dir + "/fold_" + std::to_string(f + 1);
    std::filesystem::create_directories(run_dir, ec);
    if (ec) fail(ErrorCode::kIo, run_dir + ": cannot create run directory");
    auto kv = to_kv(fold_cfg);
    for (const auto& [k, v] : extra_config) kv[k] = v;
    kv["fold"] = std::to_string(f + 1);
    write_kv_config(run_dir + "/config.txt", kv);
    save_fold_plan(plan, run_dir + "/folds.txt");
    for (const auto& [name, hist] : trained.histories)
      write_history(run_dir + "/history" + (name == "model" ? "" : "_" + name) + ".txt", hist);
    save_checkpoint(model, run_dir + "/model.ckpt");
    write_metric_records(run_dir + "/metrics_test.txt", records);

    FoldOutcome fo;
    fo.fold = f + 1;
    fo.test = aggregate(records);
    fo.run_dir = run_dir;
    write_aggregate_table(run_dir + "/summary_test.txt",
                          {{std::string("fold ") + std::to_string(f + 1), fo.test}});
    table.emplace_back("Fold " + std::to_string(f + 1), fo.test);
    outcome.per_fold.push_back(std::move(fo));
    pooled.insert(pooled.end(), records.begin(), records.end());
  }
  outcome.pooled = aggregate(pooled);
  table.emplace_back("All folds (pooled)", outcome.pooled);
  write_aggregate_table(out_dir + "/cv_table.txt", table);
  return outcome;
}

}  // namespace fuseg
