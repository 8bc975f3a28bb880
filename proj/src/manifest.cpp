#include "fuseg/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fuseg/consensus.hpp"
#include "fuseg/nifti.hpp"

namespace fuseg {

const ManifestEntry* DatasetManifest::find(const std::string& study_id) const {
  for (const auto& e : entries)
    if (e.study_id == study_id) return &e;
  return nullptr;
}

std::string resolve_path(const DatasetManifest& manifest, const std::string& p) {
  std::filesystem::path fp(p);
  if (fp.is_absolute() || manifest.base_dir.empty()) return p;
  return (std::filesystem::path(manifest.base_dir) / fp).string();
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, path + ": cannot open manifest");

  DatasetManifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();

  std::set<std::string> seen;
  std::string line;
  bool first = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (first && tok[0] == "study_id") {
      first = false;
      continue;  // header row
    }
    first = false;
    require(tok.size() >= 5 && tok.size() <= 7, ErrorCode::kMalformedFile,
            path + ":" + std::to_string(lineno) + ": expected 5-7 columns, got " +
                std::to_string(tok.size()));
    ManifestEntry e;
    e.study_id = tok[0];
    e.patient_id = tok[1];
    e.bmode_path = tok[2];
    e.doppler_path = tok[3];
    for (std::size_t i = 4; i < tok.size(); ++i) e.mask_paths.push_back(tok[i]);
    require(seen.insert(e.study_id).second, ErrorCode::kDataIntegrity,
            path + ": duplicate study_id '" + e.study_id + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, path + ": cannot open for writing");
  out << "study_id patient_id bmode doppler mask1 [mask2 mask3]\n";
  for (const auto& e : manifest.entries) {
    out << e.study_id << ' ' << e.patient_id << ' ' << e.bmode_path << ' ' << e.doppler_path;
    for (const auto& mp : e.mask_paths) out << ' ' << mp;
    out << '\n';
  }
  if (!out) fail(ErrorCode::kIo, path + ": write failed");
}

Study load_study(const DatasetManifest& manifest, const ManifestEntry& entry,
                 const LoadOptions& options, std::vector<std::string>* warnings) {
  require(!entry.mask_paths.empty() && entry.mask_paths.size() <= 3, ErrorCode::kMalformedFile,
          "study " + entry.study_id + ": expected 1-3 mask paths");

  Study s;
  s.study_id = entry.study_id;
  s.patient_id = entry.patient_id;

  Volume bmode = read_volume(resolve_path(manifest, entry.bmode_path));
  Volume doppler = read_volume(resolve_path(manifest, entry.doppler_path));

  std::vector<BinaryMask> masks;
  masks.reserve(entry.mask_paths.size());
  for (const auto& p : entry.mask_paths) masks.push_back(read_mask(resolve_path(manifest, p)));
  BinaryMask gt = consensus_mask(masks);

  s.bmode = resample(bmode, options.grid, Interp::kTrilinear);
  s.doppler = resample(doppler, options.grid, Interp::kTrilinear);
  {
    VolumeT<float> mv = gt.as_volume<float>();
    VolumeT<float> mr = resample(mv, options.grid, Interp::kNearest);
    s.mask = BinaryMask(options.grid, mr.spacing);
    for (Eigen::Index i = 0; i < mr.data.size(); ++i) s.mask.data[i] = mr.data[i] >= 0.5f ? 1 : 0;
  }

  if (options.normalize) {
    bool degenerate = false;
    s.bmode = normalize_unit(s.bmode, &degenerate);
    if (degenerate && warnings)
      warnings->push_back("study " + entry.study_id + ": constant B-mode volume, normalized to zeros");
    s.doppler = normalize_unit(s.doppler, &degenerate);
    if (degenerate && warnings)
      warnings->push_back("study " + entry.study_id + ": constant Doppler volume, normalized to zeros");
  }

  s.check_coregistered();
  return s;
}

}  // namespace fuseg
