#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lgfa/error.hpp"
#include "lgfa/features.hpp"
#include "lgfa/nn.hpp"
#include "lgfa/rng.hpp"
#include "lgfa/tensor.hpp"

namespace lgfa {

// Chunk-division axis for the nested model.
enum class Variant { kTime, kFrequency, kTimeFrequency };
// Architecture selector: the nested model or one of its single-transformer
// reductions (per-frame chunks, per-segment chunks, square chunks).
enum class Ablation { kFull, kFrameOnly, kSegmentOnly, kVitSquare };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kTime: return "t";
    case Variant::kFrequency: return "f";
    case Variant::kTimeFrequency: return "tf";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "t") return Variant::kTime;
  if (s == "f") return Variant::kFrequency;
  if (s == "tf") return Variant::kTimeFrequency;
  throw ConfigError("unknown variant '" + s + "' (expected t, f, or tf)");
}

inline std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kFrameOnly: return "frame";
    case Ablation::kSegmentOnly: return "segment";
    case Ablation::kVitSquare: return "vit-square";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::kFull;
  if (s == "frame") return Ablation::kFrameOnly;
  if (s == "segment") return Ablation::kSegmentOnly;
  if (s == "vit-square") return Ablation::kVitSquare;
  throw ConfigError("unknown ablation '" + s +
                    "' (expected full, frame, segment, or vit-square)");
}

struct LgfaConfig {
  int mel_bins = 64;
  int frames = 128;
  int channels = 1;
  int frames_per_segment = 8;  // time-axis grouping
  int bands_per_segment = 8;   // frequency-axis grouping (f and tf variants)
  int blocks = 7;              // stacked transformer blocks per stack
  int frame_dim = 16;
  int segment_dim = 256;
  int frame_heads = 4;
  int segment_heads = 4;
  int vit_chunk = 16;
  int n_classes = 4;
  Variant variant = Variant::kTime;
  Ablation ablation = Ablation::kFull;

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v < 1) throw ConfigError(std::string("config: ") + name + " must be positive");
    };
    positive(mel_bins, "mel_bins");
    positive(frames, "frames");
    positive(channels, "channels");
    positive(frames_per_segment, "frames_per_segment");
    positive(bands_per_segment, "bands_per_segment");
    positive(blocks, "blocks");
    positive(frame_dim, "frame_dim");
    positive(segment_dim, "segment_dim");
    positive(frame_heads, "frame_heads");
    positive(segment_heads, "segment_heads");
    positive(vit_chunk, "vit_chunk");
    if (n_classes < 2) throw ConfigError("config: n_classes must be at least 2");
    if (frames % frames_per_segment != 0) {
      throw ConfigError("config: frames (" + std::to_string(frames) +
                        ") not divisible by frames_per_segment (" +
                        std::to_string(frames_per_segment) + ")");
    }
    if (frame_dim % frame_heads != 0) {
      throw ConfigError("config: frame_dim not divisible by frame_heads");
    }
    if (segment_dim % segment_heads != 0) {
      throw ConfigError("config: segment_dim not divisible by segment_heads");
    }
    if (variant != Variant::kTime && mel_bins % bands_per_segment != 0) {
      throw ConfigError("config: mel_bins (" + std::to_string(mel_bins) +
                        ") not divisible by bands_per_segment (" +
                        std::to_string(bands_per_segment) + ")");
    }
    if (ablation == Ablation::kVitSquare &&
        (mel_bins % vit_chunk != 0 || frames % vit_chunk != 0)) {
      throw ConfigError("config: vit-square needs both grid dims divisible by " +
                        std::to_string(vit_chunk) + ", got " + std::to_string(mel_bins) + "x" +
                        std::to_string(frames));
    }
    if (ablation != Ablation::kFull && variant != Variant::kTime) {
      throw ConfigError("config: ablation '" + ablation_name(ablation) +
                        "' only runs with variant 't'");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"mel_bins", mel_bins},
                          {"frames", frames},
                          {"channels", channels},
                          {"frames_per_segment", frames_per_segment},
                          {"bands_per_segment", bands_per_segment},
                          {"blocks", blocks},
                          {"frame_dim", frame_dim},
                          {"segment_dim", segment_dim},
                          {"frame_heads", frame_heads},
                          {"segment_heads", segment_heads},
                          {"vit_chunk", vit_chunk},
                          {"n_classes", n_classes},
                          {"variant", variant_name(variant)},
                          {"ablation", ablation_name(ablation)}};
  }

  static LgfaConfig from_json(const nlohmann::json& j) {
    LgfaConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      if (key == "mel_bins") c.mel_bins = it.value().get<int>();
      else if (key == "frames") c.frames = it.value().get<int>();
      else if (key == "channels") c.channels = it.value().get<int>();
      else if (key == "frames_per_segment") c.frames_per_segment = it.value().get<int>();
      else if (key == "bands_per_segment") c.bands_per_segment = it.value().get<int>();
      else if (key == "blocks") c.blocks = it.value().get<int>();
      else if (key == "frame_dim") c.frame_dim = it.value().get<int>();
      else if (key == "segment_dim") c.segment_dim = it.value().get<int>();
      else if (key == "frame_heads") c.frame_heads = it.value().get<int>();
      else if (key == "segment_heads") c.segment_heads = it.value().get<int>();
      else if (key == "vit_chunk") c.vit_chunk = it.value().get<int>();
      else if (key == "n_classes") c.n_classes = it.value().get<int>();
      else if (key == "variant") c.variant = parse_variant(it.value().get<std::string>());
      else if (key == "ablation") c.ablation = parse_ablation(it.value().get<std::string>());
      else throw ConfigError("config: unknown key '" + key + "'");
    }
    return c;
  }
};

// Geometry of one nested branch: a sequence of `seq` tokens of width `in_dim`
// grouped `group` at a time into segments.
struct BranchGeom {
  int seq = 0;
  int in_dim = 0;
  int group = 0;
  int frame_dim = 0;
  int segment_dim = 0;
  int frame_heads = 0;
  int segment_heads = 0;
  int blocks = 0;

  int n_segments() const { return seq / group; }
  int token_count() const { return n_segments() + 1; }
};

inline BranchGeom time_branch_geom(const LgfaConfig& c) {
  return BranchGeom{c.frames,     c.mel_bins * c.channels, c.frames_per_segment,
                    c.frame_dim,  c.segment_dim,           c.frame_heads,
                    c.segment_heads, c.blocks};
}

inline BranchGeom frequency_branch_geom(const LgfaConfig& c) {
  return BranchGeom{c.mel_bins,   c.frames * c.channels, c.bands_per_segment,
                    c.frame_dim,  c.segment_dim,         c.frame_heads,
                    c.segment_heads, c.blocks};
}

// Parameters of one nested branch. The class token and both position
// encodings start at exactly zero; projections and blocks are random.
template <typename T>
struct BranchParams {
  Tensor<T> frame_w, frame_b;      // in_dim -> frame_dim
  Tensor<T> frame_pos;             // seq x frame_dim
  std::vector<BlockParams<T>> frame_blocks;
  Tensor<T> seg_w, seg_b;          // group*in_dim -> segment_dim
  Tensor<T> agg_w, agg_b;          // group*frame_dim -> segment_dim
  Tensor<T> cls_token;             // 1 x segment_dim
  Tensor<T> seg_pos;               // (n_segments+1) x segment_dim
  std::vector<BlockParams<T>> seg_blocks;

  static BranchParams init(const BranchGeom& g, Rng& rng) {
    BranchParams p;
    p.frame_w = Tensor<T>::param_uniform({g.in_dim, g.frame_dim}, rng,
                                         fan_in_bound<T>(g.in_dim));
    p.frame_b = Tensor<T>::param_uniform({g.frame_dim}, rng, fan_in_bound<T>(g.in_dim));
    p.frame_pos = Tensor<T>::param_zeros({g.seq, g.frame_dim});
    for (int i = 0; i < g.blocks; ++i) {
      p.frame_blocks.push_back(BlockParams<T>::init(g.frame_dim, rng));
    }
    const int seg_in = g.group * g.in_dim;
    p.seg_w = Tensor<T>::param_uniform({seg_in, g.segment_dim}, rng, fan_in_bound<T>(seg_in));
    p.seg_b = Tensor<T>::param_uniform({g.segment_dim}, rng, fan_in_bound<T>(seg_in));
    const int agg_in = g.group * g.frame_dim;
    p.agg_w = Tensor<T>::param_uniform({agg_in, g.segment_dim}, rng, fan_in_bound<T>(agg_in));
    p.agg_b = Tensor<T>::param_uniform({g.segment_dim}, rng, fan_in_bound<T>(agg_in));
    p.cls_token = Tensor<T>::param_zeros({1, g.segment_dim});
    p.seg_pos = Tensor<T>::param_zeros({g.n_segments() + 1, g.segment_dim});
    for (int i = 0; i < g.blocks; ++i) {
      p.seg_blocks.push_back(BlockParams<T>::init(g.segment_dim, rng));
    }
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".frame_proj.w", frame_w);
    fn(prefix + ".frame_proj.b", frame_b);
    fn(prefix + ".frame_pos", frame_pos);
    for (std::size_t i = 0; i < frame_blocks.size(); ++i) {
      frame_blocks[i].visit(prefix + ".frame_block" + std::to_string(i), fn);
    }
    fn(prefix + ".seg_proj.w", seg_w);
    fn(prefix + ".seg_proj.b", seg_b);
    fn(prefix + ".agg_proj.w", agg_w);
    fn(prefix + ".agg_proj.b", agg_b);
    fn(prefix + ".cls_token", cls_token);
    fn(prefix + ".seg_pos", seg_pos);
    for (std::size_t i = 0; i < seg_blocks.size(); ++i) {
      seg_blocks[i].visit(prefix + ".seg_block" + std::to_string(i), fn);
    }
  }
};

// Single-transformer reductions: one chunk embedding, class token, position
// encoding, and a block stack.
template <typename T>
struct ChunkModelParams {
  Tensor<T> proj_w, proj_b;
  Tensor<T> cls_token;  // 1 x dim
  Tensor<T> pos;        // (n_tokens+1) x dim
  std::vector<BlockParams<T>> blocks;

  static ChunkModelParams init(int chunk_width, int n_chunks, int dim, int n_blocks, Rng& rng) {
    ChunkModelParams p;
    p.proj_w = Tensor<T>::param_uniform({chunk_width, dim}, rng, fan_in_bound<T>(chunk_width));
    p.proj_b = Tensor<T>::param_uniform({dim}, rng, fan_in_bound<T>(chunk_width));
    p.cls_token = Tensor<T>::param_zeros({1, dim});
    p.pos = Tensor<T>::param_zeros({n_chunks + 1, dim});
    for (int i = 0; i < n_blocks; ++i) p.blocks.push_back(BlockParams<T>::init(dim, rng));
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".proj.w", proj_w);
    fn(prefix + ".proj.b", proj_b);
    fn(prefix + ".cls_token", cls_token);
    fn(prefix + ".pos", pos);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].visit(prefix + ".block" + std::to_string(i), fn);
    }
  }
};

// Intermediate tensors captured during one branch forward, for tests and
// report dumps.
template <typename T>
struct BranchTrace {
  Tensor<T> frame_embeddings;    // after projection + position encoding
  Tensor<T> frame_encoded;       // after the frame stack
  Tensor<T> segment_embeddings;  // raw segment projection
  Tensor<T> segment_combined;    // with aggregation, class token, positions
  Tensor<T> segment_encoded;     // after the segment stack
  std::vector<Tensor<T>> frame_attention;
  std::vector<Tensor<T>> segment_attention;
};

template <typename T>
struct ForwardTrace {
  BranchTrace<T> time;
  BranchTrace<T> freq;
  Tensor<T> logits;
};

// Options for a forward pass. `include_aux` replaces the class token and both
// position encodings with zero constants instead of the learnable tensors;
// at initialization the two paths must agree bitwise.
template <typename T>
struct ForwardOptions {
  ForwardTrace<T>* trace = nullptr;
  bool include_aux = true;
};

template <typename T>
class LgfaModel {
 public:
  LgfaModel(LgfaConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x1f6a));
    switch (cfg_.ablation) {
      case Ablation::kFull: {
        if (cfg_.variant != Variant::kFrequency) {
          time_ = BranchParams<T>::init(time_branch_geom(cfg_), rng);
        }
        if (cfg_.variant != Variant::kTime) {
          freq_ = BranchParams<T>::init(frequency_branch_geom(cfg_), rng);
        }
        break;
      }
      case Ablation::kFrameOnly:
        chunk_ = ChunkModelParams<T>::init(cfg_.mel_bins * cfg_.channels, cfg_.frames,
                                           cfg_.frame_dim, cfg_.blocks, rng);
        break;
      case Ablation::kSegmentOnly:
        chunk_ = ChunkModelParams<T>::init(
            cfg_.frames_per_segment * cfg_.mel_bins * cfg_.channels,
            cfg_.frames / cfg_.frames_per_segment, cfg_.segment_dim, cfg_.blocks, rng);
        break;
      case Ablation::kVitSquare:
        chunk_ = ChunkModelParams<T>::init(
            cfg_.vit_chunk * cfg_.vit_chunk * cfg_.channels,
            (cfg_.mel_bins / cfg_.vit_chunk) * (cfg_.frames / cfg_.vit_chunk), cfg_.segment_dim,
            cfg_.blocks, rng);
        break;
    }
    const int width = classifier_input_width();
    classifier_w_ =
        Tensor<T>::param_uniform({width, cfg_.n_classes}, rng, fan_in_bound<T>(width));
    classifier_b_ = Tensor<T>::param_uniform({cfg_.n_classes}, rng, fan_in_bound<T>(width));
  }

  const LgfaConfig& config() const { return cfg_; }

  int classifier_input_width() const {
    switch (cfg_.ablation) {
      case Ablation::kFull:
        return cfg_.variant == Variant::kTimeFrequency ? 2 * cfg_.segment_dim : cfg_.segment_dim;
      case Ablation::kFrameOnly:
        return cfg_.frame_dim;
      case Ablation::kSegmentOnly:
      case Ablation::kVitSquare:
        return cfg_.segment_dim;
    }
    return 0;
  }

  // Tokens entering the outer (or only) transformer, class token included.
  int token_count() const {
    switch (cfg_.ablation) {
      case Ablation::kFull:
        return (cfg_.variant == Variant::kFrequency ? frequency_branch_geom(cfg_)
                                                    : time_branch_geom(cfg_))
            .token_count();
      case Ablation::kFrameOnly:
        return cfg_.frames + 1;
      case Ablation::kSegmentOnly:
        return cfg_.frames / cfg_.frames_per_segment + 1;
      case Ablation::kVitSquare:
        return (cfg_.mel_bins / cfg_.vit_chunk) * (cfg_.frames / cfg_.vit_chunk) + 1;
    }
    return 0;
  }

  // Class logits (1 x n_classes) for one feature block.
  Tensor<T> forward(const Spectrogram& spec, ForwardOptions<T> opt = {}) {
    check_input(spec);
    Tensor<T> cls_feature;
    switch (cfg_.ablation) {
      case Ablation::kFull: {
        std::vector<Tensor<T>> parts;
        if (time_) {
          parts.push_back(branch_forward(frames_matrix(spec), *time_, time_branch_geom(cfg_),
                                         opt.trace ? &opt.trace->time : nullptr,
                                         opt.include_aux));
        }
        if (freq_) {
          parts.push_back(branch_forward(bands_matrix(spec), *freq_,
                                         frequency_branch_geom(cfg_),
                                         opt.trace ? &opt.trace->freq : nullptr,
                                         opt.include_aux));
        }
        cls_feature = parts.size() == 1 ? parts[0] : concat_cols(parts);
        break;
      }
      case Ablation::kFrameOnly:
        cls_feature = chunk_forward(frames_matrix(spec), opt);
        break;
      case Ablation::kSegmentOnly: {
        Tensor<T> x = frames_matrix(spec);
        cls_feature = chunk_forward(
            reshape(x, {cfg_.frames / cfg_.frames_per_segment,
                        cfg_.frames_per_segment * cfg_.mel_bins * cfg_.channels}),
            opt);
        break;
      }
      case Ablation::kVitSquare:
        cls_feature = chunk_forward(square_chunks_matrix(spec), opt);
        break;
    }
    Tensor<T> logits = linear(cls_feature, classifier_w_, classifier_b_);
    if (opt.trace) opt.trace->logits = logits;
    return logits;
  }

  // Softmax posterior over classes for one feature block.
  std::vector<double> posterior(const Spectrogram& spec) {
    Tensor<T> logits = forward(spec);
    auto lv = logits.values();
    double mx = static_cast<double>(lv[0]);
    for (auto v : lv) mx = std::max(mx, static_cast<double>(v));
    std::vector<double> p(lv.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < lv.size(); ++i) {
      p[i] = std::exp(static_cast<double>(lv[i]) - mx);
      sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
  }

  void for_each_param(const ParamVisitor<T>& fn) {
    if (time_) time_->visit("time", fn);
    if (freq_) freq_->visit("freq", fn);
    if (chunk_) chunk_->visit("chunk", fn);
    fn("classifier.w", classifier_w_);
    fn("classifier.b", classifier_b_);
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for_each_param([&out](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
    return out;
  }

  // Input grid as a (frames x mel_bins*channels) matrix; row i is frame i.
  Tensor<T> frames_matrix(const Spectrogram& spec) const {
    const int rows = cfg_.frames, fc = cfg_.mel_bins * cfg_.channels;
    std::vector<T> data(static_cast<std::size_t>(rows) * fc);
    for (int t = 0; t < rows; ++t) {
      for (int f = 0; f < cfg_.mel_bins; ++f) {
        for (int c = 0; c < cfg_.channels; ++c) {
          data[static_cast<std::size_t>(t) * fc + f * cfg_.channels + c] =
              static_cast<T>(spec.at(f, t, c));
        }
      }
    }
    return Tensor<T>::from({rows, fc}, std::move(data));
  }

  // Transposed grid: row f is mel band f over all frames.
  Tensor<T> bands_matrix(const Spectrogram& spec) const {
    const int rows = cfg_.mel_bins, tc = cfg_.frames * cfg_.channels;
    std::vector<T> data(static_cast<std::size_t>(rows) * tc);
    for (int f = 0; f < rows; ++f) {
      for (int t = 0; t < cfg_.frames; ++t) {
        for (int c = 0; c < cfg_.channels; ++c) {
          data[static_cast<std::size_t>(f) * tc + t * cfg_.channels + c] =
              static_cast<T>(spec.at(f, t, c));
        }
      }
    }
    return Tensor<T>::from({rows, tc}, std::move(data));
  }

 private:
  void check_input(const Spectrogram& spec) const {
    if (spec.mel_bins != cfg_.mel_bins || spec.frames != cfg_.frames ||
        spec.channels != cfg_.channels) {
      throw ShapeError("forward: feature block " + std::to_string(spec.mel_bins) + "x" +
                       std::to_string(spec.frames) + "x" + std::to_string(spec.channels) +
                       " does not match configured " + std::to_string(cfg_.mel_bins) + "x" +
                       std::to_string(cfg_.frames) + "x" + std::to_string(cfg_.channels));
    }
  }

  // Square chunks in (band block, time block) order, each flattened
  // (band, frame, channel) row-major.
  Tensor<T> square_chunks_matrix(const Spectrogram& spec) const {
    const int cw = cfg_.vit_chunk;
    const int bb = cfg_.mel_bins / cw, tb = cfg_.frames / cw;
    const int width = cw * cw * cfg_.channels;
    std::vector<T> data(static_cast<std::size_t>(bb) * tb * width);
    std::size_t pos = 0;
    for (int b = 0; b < bb; ++b) {
      for (int t = 0; t < tb; ++t) {
        for (int fl = 0; fl < cw; ++fl) {
          for (int tl = 0; tl < cw; ++tl) {
            for (int c = 0; c < cfg_.channels; ++c) {
              data[pos++] = static_cast<T>(spec.at(b * cw + fl, t * cw + tl, c));
            }
          }
        }
      }
    }
    return Tensor<T>::from({bb * tb, width}, std::move(data));
  }

  // One nested branch: frame stack, segment aggregation, segment stack.
  // Returns the encoded class-token row (1 x segment_dim).
  Tensor<T> branch_forward(const Tensor<T>& grid, BranchParams<T>& p, const BranchGeom& g,
                           BranchTrace<T>* trace, bool include_aux) {
    Tensor<T> x = linear(grid, p.frame_w, p.frame_b);
    if (include_aux) x = add(x, p.frame_pos);
    if (trace) trace->frame_embeddings = x;
    Tensor<T> frame_encoded =
        transformer_stack(x, p.frame_blocks, g.frame_heads, trace ? &trace->frame_attention : nullptr);
    if (trace) trace->frame_encoded = frame_encoded;

    const int n_seg = g.n_segments();
    Tensor<T> seg_raw = reshape(grid, {n_seg, g.group * g.in_dim});
    Tensor<T> seg_emb = linear(seg_raw, p.seg_w, p.seg_b);
    if (trace) trace->segment_embeddings = seg_emb;
    Tensor<T> frame_groups = reshape(frame_encoded, {n_seg, g.group * g.frame_dim});
    Tensor<T> combined = add(seg_emb, linear(frame_groups, p.agg_w, p.agg_b));

    Tensor<T> cls_row = include_aux ? p.cls_token : Tensor<T>::zeros({1, g.segment_dim});
    Tensor<T> tokens = concat_rows<T>({cls_row, combined});
    if (include_aux) tokens = add(tokens, p.seg_pos);
    if (trace) trace->segment_combined = tokens;

    Tensor<T> encoded = transformer_stack(tokens, p.seg_blocks, g.segment_heads,
                                          trace ? &trace->segment_attention : nullptr);
    if (trace) trace->segment_encoded = encoded;
    return slice_rows(encoded, 0, 1);
  }

  // Single-transformer path used by the ablations.
  Tensor<T> chunk_forward(const Tensor<T>& chunks, const ForwardOptions<T>& opt) {
    auto& p = *chunk_;
    const int dim = p.proj_w.cols();
    Tensor<T> x = linear(chunks, p.proj_w, p.proj_b);
    Tensor<T> cls_row = opt.include_aux ? p.cls_token : Tensor<T>::zeros({1, dim});
    Tensor<T> tokens = concat_rows<T>({cls_row, x});
    if (opt.include_aux) tokens = add(tokens, p.pos);
    const int heads =
        cfg_.ablation == Ablation::kFrameOnly ? cfg_.frame_heads : cfg_.segment_heads;
    Tensor<T> encoded = transformer_stack(tokens, p.blocks, heads,
                                          opt.trace ? &opt.trace->time.segment_attention : nullptr);
    if (opt.trace) opt.trace->time.segment_encoded = encoded;
    return slice_rows(encoded, 0, 1);
  }

  LgfaConfig cfg_;
  std::optional<BranchParams<T>> time_;
  std::optional<BranchParams<T>> freq_;
  std::optional<ChunkModelParams<T>> chunk_;
  Tensor<T> classifier_w_, classifier_b_;
};

}  // namespace lgfa
