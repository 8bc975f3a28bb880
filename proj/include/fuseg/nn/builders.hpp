#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "fuseg/nn/ops.hpp"

namespace fuseg::nn {

enum class BackboneKind { kUnet, kUnetPP };
enum class FusionStrategy { kSingleModality, kEarly, kIntermediate, kLate };
enum class Modality { kBmode, kDoppler };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kUnet;
  int base_filters = 16;
  int depth = 4;  // number of pooling stages
  int input_channels = 1;
  bool deep_supervision = false;  // U-Net++ only
  int grid = 64;                  // expected cubic grid, must divide by 2^depth

  // Encoder ladder (16, 32, 64, 128, 256): base 16, depth 4.
  static BackboneConfig unet_defaults() { return {BackboneKind::kUnet, 16, 4, 1, false, 64}; }
  // Skip-pathway kernel rule k = 32 * 2^i: base 32, heads on every X(0,j).
  static BackboneConfig unetpp_defaults() { return {BackboneKind::kUnetPP, 32, 4, 1, true, 64}; }

  void validate() const {
    require(base_filters >= 1 && depth >= 1 && input_channels >= 1, ErrorCode::kInvalidArgument,
            "backbone config: positive base_filters/depth/input_channels required");
    require(grid >= 1 && grid % (1 << depth) == 0, ErrorCode::kInvalidArgument,
            "backbone config: grid " + std::to_string(grid) + " not divisible by 2^depth");
    require(!(deep_supervision && kind == BackboneKind::kUnet), ErrorCode::kInvalidArgument,
            "backbone config: deep supervision applies to unetpp only");
  }

  int filters(int stage) const { return base_filters << stage; }
};

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::kSingleModality;
  Modality modality = Modality::kBmode;  // single-modality runs only
};

// Intensity standardization applied before the network (statistics from the
// training split); travels with the model through checkpoints.
struct NormStats {
  bool standardize = false;
  double bmode_mean = 0.0, bmode_std = 1.0;
  double doppler_mean = 0.0, doppler_std = 1.0;
};

const char* to_string(BackboneKind k);
const char* to_string(FusionStrategy s);
const char* to_string(Modality m);

template <typename S>
struct SegModelT {
  BackboneConfig backbone;
  FusionConfig fusion;
  GraphT<S> graph;
  int final_output = -1;
  std::vector<int> ds_heads;                   // U-Net++ deep-supervision sigmoid nodes
  std::array<int, 2> submodel_outputs{-1, -1};  // late fusion
  std::vector<std::vector<ParamT<S>*>> param_groups;  // late: one per submodel
  NormStats norm;

  int input_channels() const {
    return fusion.strategy == FusionStrategy::kSingleModality ? 1 : 2;
  }

  TensorT<S> forward(const TensorT<S>& x, NetMode mode) {
    const int div = 1 << backbone.depth;
    require(x.dims.x() % div == 0 && x.dims.y() % div == 0 && x.dims.z() % div == 0,
            ErrorCode::kInvalidArgument, "forward: input grid not divisible by 2^depth");
    graph.forward(x, mode);
    return graph.tensor(final_output);
  }
};

namespace builder_detail {

template <typename S>
struct Emitter {
  GraphT<S>& g;
  Rng& rng;
  int next_id = 0;

  std::string tag(const std::string& role) { return role + std::to_string(next_id++); }

  int conv(int in, int cin, int cout, int k, const std::string& role) {
    return g.add(std::make_shared<Conv3dOp<S>>(cin, cout, k, rng, tag(role)), {in});
  }
  int upconv(int in, int cin, int cout) {
    return g.add(std::make_shared<ConvTranspose3dOp<S>>(cin, cout, rng, tag("up")), {in});
  }
  int relu(int in) { return g.add(std::make_shared<ReluOp<S>>(), {in}); }
  int bn(int in, int ch) { return g.add(std::make_shared<BatchNormOp<S>>(ch, tag("bn")), {in}); }
  int pool(int in) { return g.add(std::make_shared<MaxPool3dOp<S>>(), {in}); }
  int sigmoid(int in) { return g.add(std::make_shared<SigmoidOp<S>>(), {in}); }
  int concat(std::vector<int> in) { return g.add(std::make_shared<ConcatOp<S>>(), std::move(in)); }
  int slice(int in, int begin, int count) {
    return g.add(std::make_shared<SliceChannelsOp<S>>(begin, count), {in});
  }
  int mean(std::vector<int> in) { return g.add(std::make_shared<MeanOp<S>>(), std::move(in)); }

  // Two 3x3x3 convolutions, each followed by ReLU then batch normalization.
  int encoder_block(int in, int cin, int cout) {
    int x = bn(relu(conv(in, cin, cout, 3, "conv")), cout);
    return bn(relu(conv(x, cout, cout, 3, "conv")), cout);
  }

  // Two 3x3x3 convolutions with ReLU (decoder blocks carry no batchnorm).
  int decoder_block(int in, int cin, int cout) {
    int x = relu(conv(in, cin, cout, 3, "conv"));
    return relu(conv(x, cout, cout, 3, "conv"));
  }

  int head(int in, int cin) { return sigmoid(conv(in, cin, 1, 1, "head")); }
};

// Plain encoder/decoder U-Net; returns the sigmoid output node.
template <typename S>
int emit_unet(Emitter<S>& e, int input, int in_ch, const BackboneConfig& cfg) {
  std::vector<int> skips;
  int cur = input, cur_ch = in_ch;
  for (int i = 0; i < cfg.depth; ++i) {
    cur = e.encoder_block(cur, cur_ch, cfg.filters(i));
    skips.push_back(cur);
    cur = e.pool(cur);
    cur_ch = cfg.filters(i);
  }
  cur = e.encoder_block(cur, cur_ch, cfg.filters(cfg.depth));
  cur_ch = cfg.filters(cfg.depth);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int ci = cfg.filters(i);
    const int up = e.upconv(cur, cur_ch, ci);
    cur = e.decoder_block(e.concat({up, skips[static_cast<std::size_t>(i)]}), 2 * ci, ci);
    cur_ch = ci;
  }
  return e.head(cur, cur_ch);
}

// Nested dense skip pathways. X(i,j) for j>0 consumes every X(i,0..j-1)
// plus the upsampled X(i+1,j-1); row i uses base_filters*2^i kernels.
// Returns the final node and fills `heads` with the deep-supervision
// sigmoid nodes when enabled.
template <typename S>
int emit_unetpp(Emitter<S>& e, int input, int in_ch, const BackboneConfig& cfg,
                std::vector<int>* heads) {
  const int d = cfg.depth;
  std::vector<std::vector<int>> X(static_cast<std::size_t>(d) + 1);
  for (auto& row : X) row.assign(static_cast<std::size_t>(d) + 1, -1);

  X[0][0] = e.encoder_block(input, in_ch, cfg.filters(0));
  for (int i = 1; i <= d; ++i)
    X[static_cast<std::size_t>(i)][0] =
        e.encoder_block(e.pool(X[static_cast<std::size_t>(i) - 1][0]), cfg.filters(i - 1), cfg.filters(i));

  for (int j = 1; j <= d; ++j)
    for (int i = 0; i + j <= d; ++i) {
      const int ki = cfg.filters(i);
      const int up = e.upconv(X[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(j) - 1],
                              cfg.filters(i + 1), ki);
      std::vector<int> parts;
      for (int p = 0; p < j; ++p) parts.push_back(X[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)]);
      parts.push_back(up);
      X[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          e.decoder_block(e.concat(parts), (j + 1) * ki, ki);
    }

  if (cfg.deep_supervision) {
    std::vector<int> hs;
    for (int j = 1; j <= d; ++j) hs.push_back(e.head(X[0][static_cast<std::size_t>(j)], cfg.filters(0)));
    if (heads) *heads = hs;
    return e.mean(hs);
  }
  return e.head(X[0][static_cast<std::size_t>(d)], cfg.filters(0));
}

template <typename S>
int emit_backbone(Emitter<S>& e, int input, int in_ch, const BackboneConfig& cfg,
                  std::vector<int>* heads) {
  return cfg.kind == BackboneKind::kUnet ? emit_unet(e, input, in_ch, cfg)
                                         : emit_unetpp(e, input, in_ch, cfg, heads);
}

// Two modality-specific encoders; features concatenated channelwise at every
// scale (including the bottleneck) ahead of one shared decoder.
template <typename S>
int emit_unet_intermediate(Emitter<S>& e, int inA, int inB, const BackboneConfig& cfg) {
  auto encode = [&](int input) {
    std::vector<int> skips;
    int cur = input, cur_ch = 1;
    for (int i = 0; i < cfg.depth; ++i) {
      cur = e.encoder_block(cur, cur_ch, cfg.filters(i));
      skips.push_back(cur);
      cur = e.pool(cur);
      cur_ch = cfg.filters(i);
    }
    skips.push_back(e.encoder_block(cur, cur_ch, cfg.filters(cfg.depth)));  // bottleneck last
    return skips;
  };
  const auto fa = encode(inA);
  const auto fb = encode(inB);

  std::vector<int> fused(static_cast<std::size_t>(cfg.depth) + 1);
  for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = e.concat({fa[i], fb[i]});

  int cur = fused[static_cast<std::size_t>(cfg.depth)];
  int cur_ch = 2 * cfg.filters(cfg.depth);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int ci = cfg.filters(i);
    const int up = e.upconv(cur, cur_ch, ci);
    cur = e.decoder_block(e.concat({up, fused[static_cast<std::size_t>(i)]}), 3 * ci, ci);
    cur_ch = ci;
  }
  return e.head(cur, cur_ch);
}

// U-Net++ variant: the encoder column X(i,0) is the fused concatenation of
// two modality encoders (2*k_i channels); nested decoder nodes as usual.
template <typename S>
int emit_unetpp_intermediate(Emitter<S>& e, int inA, int inB, const BackboneConfig& cfg,
                             std::vector<int>* heads) {
  const int d = cfg.depth;
  auto encode = [&](int input) {
    std::vector<int> col(static_cast<std::size_t>(d) + 1);
    col[0] = e.encoder_block(input, 1, cfg.filters(0));
    for (int i = 1; i <= d; ++i)
      col[static_cast<std::size_t>(i)] =
          e.encoder_block(e.pool(col[static_cast<std::size_t>(i) - 1]), cfg.filters(i - 1), cfg.filters(i));
    return col;
  };
  const auto ca = encode(inA);
  const auto cb = encode(inB);

  std::vector<std::vector<int>> X(static_cast<std::size_t>(d) + 1);
  for (auto& row : X) row.assign(static_cast<std::size_t>(d) + 1, -1);
  for (int i = 0; i <= d; ++i)
    X[static_cast<std::size_t>(i)][0] = e.concat({ca[static_cast<std::size_t>(i)], cb[static_cast<std::size_t>(i)]});

  for (int j = 1; j <= d; ++j)
    for (int i = 0; i + j <= d; ++i) {
      const int ki = cfg.filters(i);
      const int below = X[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(j) - 1];
      const int below_ch = j == 1 ? 2 * cfg.filters(i + 1) : cfg.filters(i + 1);
      const int up = e.upconv(below, below_ch, ki);
      std::vector<int> parts;
      for (int p = 0; p < j; ++p) parts.push_back(X[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)]);
      parts.push_back(up);
      const int in_ch = 2 * ki + (j - 1) * ki + ki;  // fused column + prior nodes + upsampled
      X[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          e.decoder_block(e.concat(parts), in_ch, ki);
    }

  if (cfg.deep_supervision) {
    std::vector<int> hs;
    for (int j = 1; j <= d; ++j) hs.push_back(e.head(X[0][static_cast<std::size_t>(j)], cfg.filters(0)));
    if (heads) *heads = hs;
    return e.mean(hs);
  }
  return e.head(X[0][static_cast<std::size_t>(d)], cfg.filters(0));
}

}  // namespace builder_detail

// Builds a trainable model with deterministic He initialization from `seed`.
template <typename S>
SegModelT<S> build_model(const BackboneConfig& backbone_cfg, const FusionConfig& fusion_cfg,
                         std::uint64_t seed) {
  BackboneConfig cfg = backbone_cfg;
  cfg.input_channels = fusion_cfg.strategy == FusionStrategy::kEarly ? 2 : 1;
  cfg.validate();

  SegModelT<S> model;
  model.backbone = cfg;
  model.fusion = fusion_cfg;
  Rng rng(Rng::stream(seed, 0x6d6f64656cULL /* 'model' */));
  builder_detail::Emitter<S> e{model.graph, rng};

  switch (fusion_cfg.strategy) {
    case FusionStrategy::kSingleModality: {
      model.graph.add_input(1);
      model.final_output = builder_detail::emit_backbone(e, 0, 1, cfg, &model.ds_heads);
      model.param_groups = {model.graph.params()};
      break;
    }
    case FusionStrategy::kEarly: {
      model.graph.add_input(2);
      model.final_output = builder_detail::emit_backbone(e, 0, 2, cfg, &model.ds_heads);
      model.param_groups = {model.graph.params()};
      break;
    }
    case FusionStrategy::kIntermediate: {
      model.graph.add_input(2);
      const int a = e.slice(0, 0, 1);
      const int b = e.slice(0, 1, 1);
      model.final_output =
          cfg.kind == BackboneKind::kUnet
              ? builder_detail::emit_unet_intermediate(e, a, b, cfg)
              : builder_detail::emit_unetpp_intermediate(e, a, b, cfg, &model.ds_heads);
      model.param_groups = {model.graph.params()};
      break;
    }
    case FusionStrategy::kLate: {
      model.graph.add_input(2);
      const int a = e.slice(0, 0, 1);
      const auto before_a = model.graph.params().size();
      const int outA = builder_detail::emit_backbone(e, a, 1, cfg, nullptr);
      const auto after_a = model.graph.params().size();
      const int b = e.slice(0, 1, 1);
      const int outB = builder_detail::emit_backbone(e, b, 1, cfg, nullptr);
      const auto all = model.graph.params();
      model.final_output = e.mean({outA, outB});
      model.submodel_outputs = {outA, outB};
      model.param_groups.resize(2);
      for (std::size_t i = before_a; i < after_a; ++i) model.param_groups[0].push_back(all[i]);
      for (std::size_t i = after_a; i < all.size(); ++i) model.param_groups[1].push_back(all[i]);
      break;
    }
  }

  model.graph.mark_output(model.final_output);
  for (int h : model.ds_heads) model.graph.mark_output(h);
  for (int s : model.submodel_outputs)
    if (s >= 0) model.graph.mark_output(s);
  return model;
}

template <typename S>
SegModelT<S> build_unet(const BackboneConfig& cfg, std::uint64_t seed) {
  require(cfg.kind == BackboneKind::kUnet, ErrorCode::kInvalidArgument, "build_unet: kind must be unet");
  FusionConfig f;
  f.strategy = cfg.input_channels == 2 ? FusionStrategy::kEarly : FusionStrategy::kSingleModality;
  return build_model<S>(cfg, f, seed);
}

template <typename S>
SegModelT<S> build_unetpp(const BackboneConfig& cfg, std::uint64_t seed) {
  require(cfg.kind == BackboneKind::kUnetPP, ErrorCode::kInvalidArgument,
          "build_unetpp: kind must be unetpp");
  FusionConfig f;
  f.strategy = cfg.input_channels == 2 ? FusionStrategy::kEarly : FusionStrategy::kSingleModality;
  return build_model<S>(cfg, f, seed);
}

inline const char* to_string(BackboneKind k) {
  return k == BackboneKind::kUnet ? "unet" : "unetpp";
}
inline const char* to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kSingleModality: return "single";
    case FusionStrategy::kEarly: return "early";
    case FusionStrategy::kIntermediate: return "intermediate";
    case FusionStrategy::kLate: return "late";
  }
  return "?";
}
inline const char* to_string(Modality m) { return m == Modality::kBmode ? "bmode" : "doppler"; }

}  // namespace fuseg::nn

namespace fuseg {

// Decision-level fusion: voxelwise mean of two probability maps.
inline Volume fuse_decisions(const Volume& p1, const Volume& p2) {
  require(p1.shape == p2.shape, ErrorCode::kInvalidArgument, "fuse_decisions: shape mismatch");
  Volume out = p1;
  out.data = 0.5f * (p1.data + p2.data);
  return out;
}

}  // namespace fuseg
