#include "fuseg/nn/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace fuseg {
namespace {

constexpr char kMagic[8] = {'F', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

using nlohmann::json;

json config_to_json(const SegModel& model) {
  return json{
      {"backbone",
       {{"kind", nn::to_string(model.backbone.kind)},
        {"base_filters", model.backbone.base_filters},
        {"depth", model.backbone.depth},
        {"input_channels", model.backbone.input_channels},
        {"deep_supervision", model.backbone.deep_supervision},
        {"grid", model.backbone.grid}}},
      {"fusion",
       {{"strategy", nn::to_string(model.fusion.strategy)},
        {"modality", nn::to_string(model.fusion.modality)}}},
      {"norm",
       {{"standardize", model.norm.standardize},
        {"bmode_mean", model.norm.bmode_mean},
        {"bmode_std", model.norm.bmode_std},
        {"doppler_mean", model.norm.doppler_mean},
        {"doppler_std", model.norm.doppler_std}}},
  };
}

nn::BackboneConfig backbone_from_json(const json& j) {
  nn::BackboneConfig c;
  const std::string kind = j.at("kind");
  c.kind = kind == "unet" ? nn::BackboneKind::kUnet : nn::BackboneKind::kUnetPP;
  c.base_filters = j.at("base_filters");
  c.depth = j.at("depth");
  c.input_channels = j.at("input_channels");
  c.deep_supervision = j.at("deep_supervision");
  c.grid = j.at("grid");
  return c;
}

nn::FusionConfig fusion_from_json(const json& j) {
  nn::FusionConfig f;
  const std::string s = j.at("strategy");
  if (s == "single")
    f.strategy = nn::FusionStrategy::kSingleModality;
  else if (s == "early")
    f.strategy = nn::FusionStrategy::kEarly;
  else if (s == "intermediate")
    f.strategy = nn::FusionStrategy::kIntermediate;
  else if (s == "late")
    f.strategy = nn::FusionStrategy::kLate;
  else
    fail(ErrorCode::kMalformedFile, "checkpoint: unknown fusion strategy '" + s + "'");
  f.modality = j.at("modality") == "doppler" ? nn::Modality::kDoppler : nn::Modality::kBmode;
  return f;
}

}  // namespace

void save_checkpoint(SegModel& model, const std::string& path) {
  const auto params = model.graph.params();
  json header = config_to_json(model);
  header["tensors"] = json::array();
  for (const auto* p : params)
    header["tensors"].push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  const std::string js = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, path + ": cannot open for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = js.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const auto* p : params)
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(p->value.size())));
  if (!out) fail(ErrorCode::kIo, path + ": write failed");
}

SegModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, path + ": cannot open checkpoint");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(ErrorCode::kMalformedFile, path + ": not a fuseg checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (std::uint64_t{1} << 30))
    fail(ErrorCode::kMalformedFile, path + ": bad header length");
  std::string js(len, '\0');
  in.read(js.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorCode::kMalformedFile, path + ": truncated header");

  json header;
  try {
    header = json::parse(js);
  } catch (const std::exception& e) {
    fail(ErrorCode::kMalformedFile, path + ": bad checkpoint header: " + e.what());
  }

  SegModel model = nn::build_model<float>(backbone_from_json(header.at("backbone")),
                                          fusion_from_json(header.at("fusion")), 0);
  const auto& jn = header.at("norm");
  model.norm.standardize = jn.at("standardize");
  model.norm.bmode_mean = jn.at("bmode_mean");
  model.norm.bmode_std = jn.at("bmode_std");
  model.norm.doppler_mean = jn.at("doppler_mean");
  model.norm.doppler_std = jn.at("doppler_std");

  const auto params = model.graph.params();
  const auto& tensors = header.at("tensors");
  require(tensors.size() == params.size(), ErrorCode::kMalformedFile,
          path + ": tensor count mismatch (architecture drift?)");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    require(t.at("rows") == params[i]->value.rows() && t.at("cols") == params[i]->value.cols(),
            ErrorCode::kMalformedFile, path + ": tensor shape mismatch at " + params[i]->name);
    in.read(reinterpret_cast<char*>(params[i]->value.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(params[i]->value.size())));
    if (!in) fail(ErrorCode::kMalformedFile, path + ": truncated tensor data");
  }
  return model;
}

std::uint64_t file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, path + ": cannot open for digest");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const auto got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i)
      h = (h ^ static_cast<unsigned char>(buf[i])) * 0x100000001b3ULL;
  }
  return h;
}

}  // namespace fuseg
