#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "fuseg/affine.hpp"
#include "fuseg/consensus.hpp"
#include "fuseg/folds.hpp"
#include "fuseg/nn/checkpoint.hpp"
#include "fuseg/phantom.hpp"
#include "oracles.hpp"

using namespace fuseg;

namespace {

DatasetManifest synthetic_manifest(int n_studies, int studies_per_patient, Rng& rng) {
  DatasetManifest m;
  std::vector<int> patient_of(n_studies);
  for (int i = 0; i < n_studies; ++i) patient_of[i] = i / studies_per_patient;
  rng.shuffle(patient_of);
  for (int i = 0; i < n_studies; ++i) {
    ManifestEntry e;
    e.study_id = "s" + std::to_string(i);
    e.patient_id = "p" + std::to_string(patient_of[static_cast<std::size_t>(i)]);
    e.bmode_path = "b.nii";
    e.doppler_path = "d.nii";
    e.mask_paths = {"m.nii"};
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace

TEST_CASE("consensus of two identical masks is that mask") {
  Rng rng(1);
  BinaryMask m = oracles::random_mask({4, 4, 4}, {1, 1, 1}, rng, 0.5);
  BinaryMask c = consensus_mask({m, m});
  CHECK(c.data == m.data);
}

TEST_CASE("consensus majority rule: votes {1,0,1} -> 1") {
  BinaryMask a({1, 1, 1}, {1, 1, 1}, 1);
  BinaryMask b({1, 1, 1}, {1, 1, 1}, 0);
  BinaryMask c({1, 1, 1}, {1, 1, 1}, 1);
  CHECK(consensus_mask({a, b, c}).data[0] == 1);
  CHECK(consensus_mask({a, b, b}).data[0] == 0);
}

TEST_CASE("consensus matches the brute-force vote on random triples") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<BinaryMask> masks;
    const int n = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < n; ++i) masks.push_back(oracles::random_mask({4, 4, 4}, {1, 1, 1}, rng, 0.5));
    BinaryMask got = consensus_mask(masks);
    BinaryMask want = oracles::vote(masks);
    CHECK(got.data == want.data);
  }
}

TEST_CASE("consensus is permutation-invariant and AND-consensus is a subset of each input") {
  Rng rng(3);
  std::vector<BinaryMask> masks = {oracles::random_mask({3, 3, 3}, {1, 1, 1}, rng, 0.5),
                                   oracles::random_mask({3, 3, 3}, {1, 1, 1}, rng, 0.5),
                                   oracles::random_mask({3, 3, 3}, {1, 1, 1}, rng, 0.5)};
  BinaryMask ref = consensus_mask(masks);
  std::vector<BinaryMask> perm = {masks[2], masks[0], masks[1]};
  CHECK(consensus_mask(perm).data == ref.data);

  BinaryMask and2 = consensus_mask({masks[0], masks[1]});
  for (Eigen::Index i = 0; i < and2.data.size(); ++i) {
    if (and2.data[i]) {
      CHECK(masks[0].data[i] == 1);
      CHECK(masks[1].data[i] == 1);
    }
  }
}

TEST_CASE("consensus rejects zero or too many masks and shape mismatches") {
  Rng rng(4);
  BinaryMask m = oracles::random_mask({3, 3, 3}, {1, 1, 1}, rng, 0.5);
  BinaryMask other = oracles::random_mask({4, 3, 3}, {1, 1, 1}, rng, 0.5);
  CHECK_THROWS_AS(consensus_mask({}), Error);
  CHECK_THROWS_AS(consensus_mask({m, m, m, m}), Error);
  CHECK_THROWS_AS(consensus_mask({m, other}), Error);
}

TEST_CASE("make_folds yields 240/80/80 on 400 distinct patients") {
  Rng rng(5);
  auto manifest = synthetic_manifest(400, 1, rng);
  FoldPlan plan = make_folds(manifest, 17);
  REQUIRE(plan.n_folds() == 5);
  for (const auto& f : plan.folds) {
    CHECK(f.train.size() == 240);
    CHECK(f.val.size() == 80);
    CHECK(f.test.size() == 80);
  }
}

TEST_CASE("make_folds keeps studies of one patient in one subset") {
  Rng rng(6);
  auto manifest = synthetic_manifest(60, 3, rng);
  FoldPlan plan = make_folds(manifest, 23);
  std::map<std::string, std::string> patient_of;
  for (const auto& e : manifest.entries) patient_of[e.study_id] = e.patient_id;
  for (const auto& f : plan.folds) {
    std::map<std::string, int> subset_of_patient;
    auto scan = [&](const std::vector<std::string>& ids, int which) {
      for (const auto& id : ids) {
        const auto& pid = patient_of.at(id);
        auto [it, fresh] = subset_of_patient.emplace(pid, which);
        if (!fresh) CHECK(it->second == which);
      }
    };
    scan(f.train, 0);
    scan(f.val, 1);
    scan(f.test, 2);
  }
}

TEST_CASE("make_folds partitions every study exactly once per fold") {
  Rng rng(7);
  auto manifest = synthetic_manifest(37, 2, rng);
  FoldPlan plan = make_folds(manifest, 3);
  for (const auto& f : plan.folds) {
    std::set<std::string> all;
    for (const auto& id : f.train) CHECK(all.insert(id).second);
    for (const auto& id : f.val) CHECK(all.insert(id).second);
    for (const auto& id : f.test) CHECK(all.insert(id).second);
    CHECK(all.size() == manifest.entries.size());
    CHECK(std::abs(static_cast<int>(f.train.size()) - 22) <= 1);
    CHECK(std::abs(static_cast<int>(f.val.size()) - 7) <= 1);
  }
}

TEST_CASE("make_folds is deterministic in (manifest, seed)") {
  Rng rng(8);
  auto manifest = synthetic_manifest(50, 1, rng);
  FoldPlan a = make_folds(manifest, 99);
  FoldPlan b = make_folds(manifest, 99);
  for (int f = 0; f < 5; ++f) {
    CHECK(a.folds[f].train == b.folds[f].train);
    CHECK(a.folds[f].val == b.folds[f].val);
    CHECK(a.folds[f].test == b.folds[f].test);
  }
  FoldPlan c = make_folds(manifest, 100);
  bool any_diff = false;
  for (int f = 0; f < 5; ++f) any_diff = any_diff || a.folds[f].train != c.folds[f].train;
  CHECK(any_diff);
}

TEST_CASE("make_folds rejects too few patients") {
  Rng rng(9);
  auto manifest = synthetic_manifest(4, 1, rng);
  CHECK_THROWS_AS(make_folds(manifest, 1), Error);
}

TEST_CASE("fold plan save/load round-trip") {
  Rng rng(10);
  auto manifest = synthetic_manifest(25, 1, rng);
  FoldPlan plan = make_folds(manifest, 31);
  const auto path = (std::filesystem::temp_directory_path() / "fuseg_folds.txt").string();
  save_fold_plan(plan, path);
  FoldPlan back = load_fold_plan(path);
  CHECK(back.seed == plan.seed);
  REQUIRE(back.n_folds() == plan.n_folds());
  for (int f = 0; f < plan.n_folds(); ++f) CHECK(back.folds[f].train == plan.folds[f].train);
}

TEST_CASE("fold_dissimilarity diagonal is zero, entries bounded, disjoint sets read 100") {
  Rng rng(11);
  auto manifest = synthetic_manifest(40, 1, rng);
  FoldPlan plan = make_folds(manifest, 47);
  const auto t = fold_dissimilarity(plan);
  for (int i = 0; i < 5; ++i) {
    CHECK(t.train(i, i) == 0.0);
    CHECK(t.val(i, i) == 0.0);
    CHECK(t.test(i, i) == 0.0);
    for (int j = 0; j < 5; ++j) {
      CHECK(t.train(i, j) >= 0.0);
      CHECK(t.train(i, j) <= 100.0);
    }
  }

  FoldPlan manual;
  manual.folds.resize(2);
  manual.folds[0].test = {"a", "b"};
  manual.folds[1].test = {"c", "d"};
  manual.folds[0].train = manual.folds[1].train = {"x"};
  manual.folds[0].val = manual.folds[1].val = {"y"};
  const auto t2 = fold_dissimilarity(manual);
  CHECK(t2.test(0, 1) == 100.0);
  CHECK(t2.train(0, 1) == 0.0);
}

TEST_CASE("fold_dissimilarity matches a brute-force set count") {
  Rng rng(12);
  auto manifest = synthetic_manifest(30, 1, rng);
  FoldPlan plan = make_folds(manifest, 53);
  const auto t = fold_dissimilarity(plan);
  for (int i = 0; i < plan.n_folds(); ++i)
    for (int j = 0; j < plan.n_folds(); ++j) {
      const auto& si = plan.folds[i].test;
      const auto& sj = plan.folds[j].test;
      int common = 0;
      for (const auto& id : si) common += std::count(sj.begin(), sj.end(), id) > 0 ? 1 : 0;
      const double want = 100.0 * (1.0 - static_cast<double>(common) / static_cast<double>(si.size()));
      CHECK(t.test(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("sample_affine respects its configured ranges") {
  AffineConfig cfg;
  cfg.max_translation_vox = 3;
  cfg.max_rotation_deg = 5;
  cfg.scale_lo = 0.95;
  cfg.scale_hi = 1.05;
  cfg.max_shear_vox = 2;
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    AffineParams p = sample_affine(cfg, rng);
    CHECK(p.translation_vox.cwiseAbs().maxCoeff() <= 3.0);
    CHECK(p.rotation_deg.cwiseAbs().maxCoeff() <= 5.0);
    CHECK(p.scale.minCoeff() >= 0.95);
    CHECK(p.scale.maxCoeff() <= 1.05);
    CHECK(p.shear_vox.cwiseAbs().maxCoeff() <= 2.0);
  }
}

TEST_CASE("apply_affine identity leaves a study unchanged") {
  Rng rng(14);
  PhantomSpec spec;
  spec.grid = Index3(12, 12, 12);
  spec.center = {5.5, 5.5, 5.5};
  spec.radii = {3.5, 3.0, 3.2};
  spec.thickness = 1.5;
  spec.seed = 77;
  Study s = generate_phantom(spec, "s1");
  Study t = apply_affine(s, AffineParams::identity());
  CHECK(t.mask.data == s.mask.data);
  CHECK((t.bmode.data - s.bmode.data).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("pure unit translation moves a single-voxel mask by exactly one voxel") {
  Study s;
  s.study_id = "t";
  s.patient_id = "t";
  s.bmode = Volume({8, 8, 8}, {1, 1, 1});
  s.doppler = Volume({8, 8, 8}, {1, 1, 1});
  s.mask = BinaryMask({8, 8, 8}, {1, 1, 1});
  s.mask.at(3, 4, 5) = 1;
  AffineParams p;
  p.translation_vox = {1.0, 0.0, 0.0};
  Study t = apply_affine(s, p);
  CHECK(t.mask.count() == 1);
  CHECK(t.mask.at(4, 4, 5) == 1);
}

TEST_CASE("a marker shared by bmode and mask lands in the same place after warping") {
  Rng rng(15);
  Study s;
  s.bmode = Volume({16, 16, 16}, {1, 1, 1});
  s.doppler = Volume({16, 16, 16}, {1, 1, 1});
  s.mask = BinaryMask({16, 16, 16}, {1, 1, 1});
  s.bmode.at(9, 7, 8) = 1.0f;
  s.mask.at(9, 7, 8) = 1;

  AffineConfig cfg;
  cfg.max_translation_vox = 2;
  cfg.max_rotation_deg = 8;
  cfg.scale_lo = 0.95;
  cfg.scale_hi = 1.05;
  cfg.max_shear_vox = 1.5;
  for (int trial = 0; trial < 20; ++trial) {
    AffineParams p = sample_affine(cfg, rng);
    Study t = apply_affine(s, p);
    // wherever the warped mask is on, warped bmode must carry marker mass
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          if (t.mask.at(x, y, z)) CHECK(t.bmode.at(x, y, z) > 0.0f);
  }
}

TEST_CASE("apply_affine keeps masks binary and shapes intact under random params") {
  Rng rng(16);
  PhantomSpec spec;
  spec.grid = Index3(14, 14, 14);
  spec.center = {6.5, 6.5, 6.5};
  spec.radii = {4.0, 3.5, 3.8};
  spec.thickness = 1.8;
  spec.seed = 5;
  Study s = generate_phantom(spec, "s");
  AffineConfig cfg;  // spec defaults: 10 vox / 10 deg / [0.9,1.1] / 15 vox
  for (int trial = 0; trial < 10; ++trial) {
    Study t = apply_affine(s, sample_affine(cfg, rng));
    CHECK(t.mask.shape == s.mask.shape);
    t.mask.check_binary("affine");
    t.check_coregistered();
  }
}

TEST_CASE("generate_phantom is deterministic in its seed") {
  PhantomSpec spec;
  spec.grid = Index3(16, 16, 16);
  spec.center = {7.5, 7.5, 7.5};
  spec.radii = {4.5, 4.0, 4.2};
  spec.thickness = 2.0;
  spec.seed = 123;
  Study a = generate_phantom(spec, "a");
  Study b = generate_phantom(spec, "a");
  CHECK(a.mask.data == b.mask.data);
  CHECK(a.bmode.data == b.bmode.data);
  CHECK(a.doppler.data == b.doppler.data);
}

TEST_CASE("noise-free, confounder-free phantom: thresholding bmode recovers the mask") {
  PhantomSpec spec;
  spec.grid = Index3(16, 16, 16);
  spec.center = {7.5, 7.5, 7.5};
  spec.radii = {4.5, 4.0, 4.2};
  spec.thickness = 2.0;
  spec.noise_level = 0.0;
  spec.confounder = false;
  spec.seed = 9;
  Study s = generate_phantom(spec, "s");
  BinaryMask rec = binarize(s.bmode, 0.5);
  CHECK(rec.data == s.mask.data);
}

TEST_CASE("phantom shell exceeding the grid is rejected") {
  PhantomSpec spec;
  spec.grid = Index3(12, 12, 12);
  spec.center = {6.0, 6.0, 6.0};
  spec.radii = {8.0, 4.0, 4.0};
  spec.thickness = 2.0;
  CHECK_THROWS_AS(generate_phantom(spec, "s"), Error);
}

TEST_CASE("sampled phantom mask volume tracks the analytic shell volume") {
  Rng rng(17);
  const Index3 grid(24, 24, 24);
  for (int trial = 0; trial < 100; ++trial) {
    PhantomSpec spec = sample_phantom_spec(grid, {1, 1, 1}, rng);
    Study s = generate_phantom(spec, "s");
    const Eigen::Vector3d inner = (spec.radii.array() - spec.thickness).max(0.0);
    const double analytic =
        4.0 / 3.0 * 3.14159265358979 * (spec.radii.prod() - inner.prod());
    const auto count = static_cast<double>(s.mask.count());
    // voxelization keeps discrete counts within ~a third of the analytic volume
    CHECK(count > 0.65 * analytic);
    CHECK(count < 1.35 * analytic);
    const double frac = count / static_cast<double>(s.mask.voxels());
    CHECK(frac > 0.005);
    CHECK(frac < 0.20);
  }
}

TEST_CASE("an empty phantom dataset is a valid manifest") {
  namespace fs = std::filesystem;
  const auto dir = (fs::temp_directory_path() / "fuseg_phantom_empty").string();
  fs::remove_all(dir);
  PhantomDatasetOptions opt;
  opt.count = 0;
  const auto manifest = generate_phantom_dataset(dir, opt);
  CHECK(manifest.entries.empty());
  const auto back = read_manifest(dir + "/manifest.txt");
  CHECK(back.entries.empty());
}

TEST_CASE("phantom dataset files are byte-identical across same-seed runs") {
  namespace fs = std::filesystem;
  const auto base = fs::temp_directory_path() / "fuseg_phantom_det";
  fs::remove_all(base);
  PhantomDatasetOptions opt;
  opt.count = 3;
  opt.seed = 99;
  opt.grid = Index3(10, 10, 10);
  generate_phantom_dataset((base / "a").string(), opt);
  generate_phantom_dataset((base / "b").string(), opt);
  for (const auto& entry : fs::recursive_directory_iterator(base / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), base / "a");
    CHECK(file_digest(entry.path().string()) == file_digest((base / "b" / rel).string()));
  }
}

TEST_CASE("phantom dataset generation round-trips through the study loader") {
  const auto dir = (std::filesystem::temp_directory_path() / "fuseg_phantom_ds").string();
  std::filesystem::remove_all(dir);
  PhantomDatasetOptions opt;
  opt.count = 4;
  opt.seed = 3;
  opt.grid = Index3(12, 12, 12);
  DatasetManifest manifest = generate_phantom_dataset(dir, opt);
  REQUIRE(manifest.entries.size() == 4);
  LoadOptions lo;
  lo.grid = Index3(12, 12, 12);
  for (const auto& e : manifest.entries) {
    Study s = load_study(manifest, e, lo);
    s.check_coregistered();
    CHECK_FALSE(s.mask.empty_mask());
  }
}
