// fuseg - multi-modal 3D segmentation experiments on dual-modality volumes.
//
// Subcommands: phantom-gen, split, train, evaluate, infer, report.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "fuseg/folds.hpp"
#include "fuseg/nifti.hpp"
#include "fuseg/phantom.hpp"
#include "fuseg/train.hpp"

namespace fs = std::filesystem;
using namespace fuseg;

namespace {

std::uint64_t pick_seed(CLI::Option* opt, std::uint64_t seed) {
  if (opt->count() > 0) return seed;
  const auto s = static_cast<std::uint64_t>(
      std::chrono::steady_clock::now().time_since_epoch().count());
  std::cout << "no --seed given; using recorded seed " << s << "\n";
  return s;
}

nn::BackboneConfig backbone_from_name(const std::string& name) {
  if (name == "unet") return nn::BackboneConfig::unet_defaults();
  if (name == "unetpp") return nn::BackboneConfig::unetpp_defaults();
  fail(ErrorCode::kInvalidArgument, "unknown backbone '" + name + "' (unet|unetpp)");
}

nn::FusionConfig fusion_from_name(const std::string& name) {
  nn::FusionConfig f;
  if (name == "single:bmode") {
    f.strategy = nn::FusionStrategy::kSingleModality;
    f.modality = nn::Modality::kBmode;
  } else if (name == "single:doppler") {
    f.strategy = nn::FusionStrategy::kSingleModality;
    f.modality = nn::Modality::kDoppler;
  } else if (name == "early") {
    f.strategy = nn::FusionStrategy::kEarly;
  } else if (name == "intermediate") {
    f.strategy = nn::FusionStrategy::kIntermediate;
  } else if (name == "late") {
    f.strategy = nn::FusionStrategy::kLate;
  } else {
    fail(ErrorCode::kInvalidArgument,
         "unknown fusion '" + name + "' (single:bmode|single:doppler|early|intermediate|late)");
  }
  return f;
}

void apply_network_overrides(nn::BackboneConfig& bb, const std::map<std::string, std::string>& kv,
                             int grid) {
  if (auto it = kv.find("base_filters"); it != kv.end()) bb.base_filters = std::stoi(it->second);
  if (auto it = kv.find("depth"); it != kv.end()) bb.depth = std::stoi(it->second);
  if (auto it = kv.find("deep_supervision"); it != kv.end())
    bb.deep_supervision = it->second == "1" || it->second == "true";
  bb.grid = grid;
  bb.validate();
}

struct RunContext {
  SegModel model;
  std::map<std::string, std::string> kv;
  DatasetManifest manifest;
  FoldPlan plan;
  int fold = 1;
  LoadOptions load;
  double threshold = 0.5;
};

RunContext open_run(const std::string& run_dir) {
  RunContext ctx;
  ctx.kv = read_kv_config(run_dir + "/config.txt");
  ctx.model = load_checkpoint(run_dir + "/model.ckpt");
  const auto need = [&](const char* key) {
    auto it = ctx.kv.find(key);
    require(it != ctx.kv.end(), ErrorCode::kMalformedFile,
            run_dir + "/config.txt: missing key '" + std::string(key) + "'");
    return it->second;
  };
  ctx.manifest = read_manifest(need("manifest"));
  ctx.plan = load_fold_plan(need("folds"));
  ctx.fold = std::stoi(need("fold"));
  const int grid = std::stoi(need("grid"));
  ctx.load.grid = Index3(grid, grid, grid);
  if (auto it = ctx.kv.find("threshold"); it != ctx.kv.end()) ctx.threshold = std::stod(it->second);
  return ctx;
}

std::vector<Study> load_subset(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                               const LoadOptions& load) {
  std::vector<Study> out;
  out.reserve(ids.size());
  std::vector<std::string> warnings;
  for (const auto& id : ids) {
    const auto* e = manifest.find(id);
    require(e != nullptr, ErrorCode::kDataIntegrity, "manifest has no study '" + id + "'");
    out.push_back(load_study(manifest, *e, load, &warnings));
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return out;
}

int cmd_phantom_gen(const std::string& out_dir, int count, std::uint64_t seed, int grid,
                    double noise, int studies_per_patient, bool no_confounder) {
  PhantomDatasetOptions opt;
  opt.count = count;
  opt.seed = seed;
  opt.grid = Index3(grid, grid, grid);
  opt.noise_level = noise;
  opt.studies_per_patient = studies_per_patient;
  opt.confounder = !no_confounder;
  const auto manifest = generate_phantom_dataset(out_dir, opt);
  std::cout << "wrote " << manifest.entries.size() << " studies under " << out_dir << "\n";
  return 0;
}

int cmd_split(const std::string& manifest_path, std::uint64_t seed, const std::string& out_path,
              int n_folds) {
  const auto manifest = read_manifest(manifest_path);
  const auto plan = make_folds(manifest, seed, n_folds);
  save_fold_plan(plan, out_path);
  print_dissimilarity(std::cout, fold_dissimilarity(plan));
  std::cout << "fold plan written to " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& folds_path,
              const std::string& fold_arg, const std::string& backbone_name,
              const std::string& fusion_name, const std::string& config_path,
              const std::string& out_dir, std::uint64_t seed, bool seed_given, int grid) {
  const auto manifest = read_manifest(manifest_path);
  const auto plan = load_fold_plan(folds_path);

  TrainConfig cfg;
  std::map<std::string, std::string> file_kv;
  if (!config_path.empty()) {
    file_kv = read_kv_config(config_path);
    cfg = train_config_from_kv(file_kv);
  }
  if (seed_given) cfg.seed = seed;

  nn::BackboneConfig bb = backbone_from_name(backbone_name);
  apply_network_overrides(bb, file_kv, grid);
  const nn::FusionConfig fu = fusion_from_name(fusion_name);

  LoadOptions load;
  load.grid = Index3(grid, grid, grid);

  if (fold_arg == "all") {
    // full cross-validation: one run directory per fold plus the pooled table
    std::map<std::string, std::string> extra = {
        {"backbone", backbone_name},
        {"fusion", fusion_name},
        {"base_filters", std::to_string(bb.base_filters)},
        {"depth", std::to_string(bb.depth)},
        {"deep_supervision", bb.deep_supervision ? "1" : "0"},
        {"manifest", fs::absolute(manifest_path).string()},
        {"folds", fs::absolute(folds_path).string()},
        {"grid", std::to_string(grid)},
    };
    const auto outcome = run_cv(manifest, plan, bb, fu, cfg, load, out_dir, extra);
    for (const auto& f : outcome.per_fold)
      std::cout << format_aggregate_row("fold " + std::to_string(f.fold) + " test", f.test) << "\n";
    std::cout << format_aggregate_row("pooled", outcome.pooled) << "\n";
    return 0;
  }

  const int fold = std::stoi(fold_arg);
  require(fold >= 1 && fold <= plan.n_folds(), ErrorCode::kInvalidArgument,
          "--fold must be in 1.." + std::to_string(plan.n_folds()) + " or 'all'");
  const auto& split = plan.folds[static_cast<std::size_t>(fold - 1)];
  auto train_set = load_subset(manifest, split.train, load);
  auto val_set = load_subset(manifest, split.val, load);
  auto test_set = load_subset(manifest, split.test, load);

  SegModel model = nn::build_model<float>(bb, fu, cfg.seed);
  const auto trained = train_model(model, train_set, val_set, cfg);
  const auto records = evaluate_studies(model, test_set, cfg.threshold);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::kIo, out_dir + ": cannot create run directory");
  auto kv = to_kv(cfg);
  kv["backbone"] = backbone_name;
  kv["fusion"] = fusion_name;
  kv["base_filters"] = std::to_string(bb.base_filters);
  kv["depth"] = std::to_string(bb.depth);
  kv["deep_supervision"] = bb.deep_supervision ? "1" : "0";
  kv["manifest"] = fs::absolute(manifest_path).string();
  kv["folds"] = fs::absolute(folds_path).string();
  kv["fold"] = std::to_string(fold);
  kv["grid"] = std::to_string(grid);
  write_kv_config(out_dir + "/config.txt", kv);
  save_fold_plan(plan, out_dir + "/folds.txt");
  for (const auto& [name, hist] : trained.histories)
    write_history(out_dir + "/history" + (name == "model" ? "" : "_" + name) + ".txt", hist);
  save_checkpoint(model, out_dir + "/model.ckpt");
  write_metric_records(out_dir + "/metrics_test.txt", records);
  const auto agg = aggregate(records);
  write_aggregate_table(
      out_dir + "/summary_test.txt",
      {{backbone_name + " " + fusion_name + " fold " + std::to_string(fold), agg}});
  std::cout << format_aggregate_row("fold " + std::to_string(fold) + " test", agg) << "\n";
  return 0;
}

int cmd_evaluate(const std::string& run_dir, const std::string& split_name) {
  auto ctx = open_run(run_dir);
  require(split_name == "train" || split_name == "val" || split_name == "test",
          ErrorCode::kInvalidArgument, "--split must be train|val|test");
  const auto& split = ctx.plan.folds[static_cast<std::size_t>(ctx.fold - 1)];
  const auto& ids =
      split_name == "train" ? split.train : split_name == "val" ? split.val : split.test;
  const auto studies = load_subset(ctx.manifest, ids, ctx.load);
  const auto records = evaluate_studies(ctx.model, studies, ctx.threshold);
  write_metric_records(run_dir + "/metrics_" + split_name + ".txt", records);
  const auto agg = aggregate(records);
  write_aggregate_table(run_dir + "/summary_" + split_name + ".txt", {{split_name, agg}});
  std::cout << format_aggregate_row(split_name, agg) << "\n";
  return 0;
}

int cmd_infer(const std::string& run_dir, const std::string& study_dir, const std::string& out_path,
              const std::string& prob_path) {
  auto ctx = open_run(run_dir);
  DatasetManifest local;
  local.base_dir = study_dir;
  ManifestEntry e;
  e.study_id = fs::path(study_dir).filename().string();
  e.patient_id = e.study_id;
  e.bmode_path = "bmode.nii.gz";
  e.doppler_path = "doppler.nii.gz";
  for (const char* cand : {"mask.nii.gz", "mask.nii"})
    if (fs::exists(fs::path(study_dir) / cand)) {
      e.mask_paths = {cand};
      break;
    }
  if (e.mask_paths.empty()) {
    // inference does not need a ground-truth mask; substitute an all-zero one
    const Volume probe = read_volume((fs::path(study_dir) / "bmode.nii.gz").string());
    BinaryMask zero(probe.shape, probe.spacing);
    const auto tmp = fs::temp_directory_path() / "fuseg_zero_mask.nii.gz";
    write_mask(zero, tmp.string());
    e.mask_paths = {tmp.string()};
  }
  const Study s = load_study(local, e, ctx.load);
  const Volume prob = predict(ctx.model, s);
  write_mask(binarize(prob, ctx.threshold), out_path);
  if (!prob_path.empty()) write_volume(prob, prob_path);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "curves", ec);
  if (ec) fail(ErrorCode::kIo, out_dir + ": cannot create output directory");

  // pool per-study records across runs sharing a method label
  std::map<std::string, std::vector<MetricRecord>> by_label;
  for (const auto& dir : run_dirs) {
    const auto kv = read_kv_config(dir + "/config.txt");
    auto get = [&](const char* k, const char* dflt) {
      auto it = kv.find(k);
      return it == kv.end() ? std::string(dflt) : it->second;
    };
    const std::string label = get("backbone", "?") + " " + get("fusion", "?") +
                              (get("augment", "0") == "1" ? " +aug" : " -aug");
    const auto records = read_metric_records(dir + "/metrics_test.txt");
    auto& bucket = by_label[label];
    bucket.insert(bucket.end(), records.begin(), records.end());

    const std::string run_name = fs::path(dir).filename().string();
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("history", 0) == 0)
        fs::copy_file(entry.path(), fs::path(out_dir) / "curves" / (run_name + "__" + name),
                      fs::copy_options::overwrite_existing, ec);
    }
  }

  std::vector<std::pair<std::string, AggregateResult>> rows;
  for (const auto& [label, records] : by_label) rows.emplace_back(label, aggregate(records));
  write_aggregate_table(out_dir + "/comparison.txt", rows);
  for (const auto& [label, agg] : rows) std::cout << format_aggregate_row(label, agg) << "\n";
  std::cout << "report written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-modal 3D volumetric segmentation experiments"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("phantom-gen", "generate a synthetic dual-modality dataset");
  std::string gen_out;
  int gen_count = 10, gen_grid = 64, gen_spp = 1;
  std::uint64_t gen_seed = 0;
  double gen_noise = 0.15;
  bool gen_noconf = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of studies");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--grid", gen_grid, "cubic grid size");
  gen->add_option("--noise", gen_noise, "speckle noise level");
  gen->add_option("--studies-per-patient", gen_spp, "studies sharing one patient id");
  gen->add_flag("--no-confounder", gen_noconf, "omit the outside-mask confounder texture");

  auto* split = app.add_subcommand("split", "make a 5-fold 60/20/20 patient-level fold plan");
  std::string split_manifest, split_out;
  std::uint64_t split_seed = 0;
  int split_folds = 5;
  split->add_option("--manifest", split_manifest, "dataset manifest")->required();
  auto* split_seed_opt = split->add_option("--seed", split_seed, "rng seed");
  split->add_option("--out", split_out, "fold plan output file")->required();
  split->add_option("--folds", split_folds, "number of folds");

  auto* train_cmd = app.add_subcommand("train", "train one fold (or all folds) of a plan");
  std::string tr_manifest, tr_folds, tr_fold = "1", tr_backbone = "unet", tr_fusion = "early",
              tr_config, tr_out;
  std::uint64_t tr_seed = 0;
  int tr_grid = 64;
  train_cmd->add_option("--manifest", tr_manifest, "dataset manifest")->required();
  train_cmd->add_option("--folds", tr_folds, "fold plan file")->required();
  train_cmd->add_option("--fold", tr_fold, "fold number (1-based) or 'all'");
  train_cmd->add_option("--backbone", tr_backbone, "unet|unetpp");
  train_cmd->add_option("--fusion", tr_fusion,
                        "single:bmode|single:doppler|early|intermediate|late");
  train_cmd->add_option("--config", tr_config, "key = value training config file");
  train_cmd->add_option("--out", tr_out, "run directory")->required();
  auto* tr_seed_opt = train_cmd->add_option("--seed", tr_seed, "rng seed (overrides config)");
  train_cmd->add_option("--grid", tr_grid, "cubic working grid");

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a run's checkpoint on a split");
  std::string ev_run, ev_split = "test";
  eval_cmd->add_option("--run", ev_run, "run directory")->required();
  eval_cmd->add_option("--split", ev_split, "train|val|test");

  auto* infer_cmd = app.add_subcommand("infer", "predict a mask for one study directory");
  std::string in_run, in_study, in_out, in_prob;
  infer_cmd->add_option("--run", in_run, "run directory")->required();
  infer_cmd->add_option("--study", in_study, "study directory with bmode/doppler volumes")
      ->required();
  infer_cmd->add_option("--out", in_out, "output mask file")->required();
  infer_cmd->add_option("--prob", in_prob, "optional probability-map output file");

  auto* report_cmd = app.add_subcommand("report", "cross-run comparison tables and DSC curves");
  std::vector<std::string> rp_runs;
  std::string rp_out;
  report_cmd->add_option("--runs", rp_runs, "run directories")->required()->expected(-1);
  report_cmd->add_option("--out", rp_out, "report output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_phantom_gen(gen_out, gen_count, pick_seed(gen_seed_opt, gen_seed), gen_grid,
                             gen_noise, gen_spp, gen_noconf);
    if (split->parsed())
      return cmd_split(split_manifest, pick_seed(split_seed_opt, split_seed), split_out,
                       split_folds);
    if (train_cmd->parsed())
      return cmd_train(tr_manifest, tr_folds, tr_fold, tr_backbone, tr_fusion, tr_config, tr_out,
                       tr_seed, tr_seed_opt->count() > 0, tr_grid);
    if (eval_cmd->parsed()) return cmd_evaluate(ev_run, ev_split);
    if (infer_cmd->parsed()) return cmd_infer(in_run, in_study, in_out, in_prob);
    if (report_cmd->parsed()) return cmd_report(rp_runs, rp_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCode::kInternal);
  }
  return 0;
}
