#include <cmath>
#include <cstring>

#include "doctest.h"
#include "lgfa/checkpoint.hpp"
#include "lgfa/gradcheck.hpp"
#include "lgfa/model.hpp"
#include "test_util.hpp"

using namespace lgfa;

namespace {

// Zeroes every parameter whose name contains the given substring.
template <typename T>
void zero_params_matching(LgfaModel<T>& model, const std::string& needle) {
  model.for_each_param([&](const std::string& name, Tensor<T>& t) {
    if (name.find(needle) != std::string::npos) {
      auto v = t.values();
      std::fill(v.begin(), v.end(), T(0));
    }
  });
}

LgfaConfig tiny_config() {
  LgfaConfig cfg;
  cfg.mel_bins = 8;
  cfg.frames = 8;
  cfg.frames_per_segment = 2;
  cfg.bands_per_segment = 2;
  cfg.blocks = 2;
  cfg.frame_dim = 4;
  cfg.segment_dim = 8;
  cfg.frame_heads = 2;
  cfg.segment_heads = 2;
  cfg.n_classes = 3;
  return cfg;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent settings") {
  LgfaConfig cfg;
  cfg.frames = 127;  // not divisible by 8
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = LgfaConfig{};
  cfg.frame_dim = 15;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = LgfaConfig{};
  cfg.ablation = Ablation::kVitSquare;
  cfg.mel_bins = 60;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = LgfaConfig{};
  cfg.ablation = Ablation::kFrameOnly;
  cfg.variant = Variant::kFrequency;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  CHECK_THROWS_AS(LgfaConfig::from_json(nlohmann::json{{"bogus_key", 1}}), ConfigError);

  LgfaConfig defaults;
  CHECK_NOTHROW(defaults.validate());
  CHECK(LgfaConfig::from_json(defaults.to_json()).frames == 128);
}

TEST_CASE("shape chain under default settings") {
  LgfaConfig cfg;  // 64x128x1, k=8, L=7, 16/256 dims, 4 heads
  LgfaModel<double> model(cfg, 42);
  Spectrogram spec = random_spectrogram(cfg, 7);

  ForwardTrace<double> trace;
  ForwardOptions<double> opt;
  opt.trace = &trace;
  Tensor<double> logits = model.forward(spec, opt);

  CHECK(trace.time.frame_embeddings.rows() == 128);
  CHECK(trace.time.frame_embeddings.cols() == 16);
  CHECK(trace.time.frame_encoded.rows() == 128);
  CHECK(trace.time.frame_encoded.cols() == 16);
  CHECK(trace.time.segment_embeddings.rows() == 16);
  CHECK(trace.time.segment_embeddings.cols() == 256);
  CHECK(trace.time.segment_combined.rows() == 17);
  CHECK(trace.time.segment_combined.cols() == 256);
  CHECK(trace.time.segment_encoded.rows() == 17);
  CHECK(trace.time.segment_encoded.cols() == 256);
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == 4);
  CHECK(model.token_count() == 17);
  CHECK(model.classifier_input_width() == 256);
  // L blocks, one attention map per head per block.
  CHECK(trace.time.frame_attention.size() == 7 * 4);
  CHECK(trace.time.segment_attention.size() == 7 * 4);

  // Aggregation projection takes k*frame_dim = 128 to segment_dim = 256.
  bool saw_agg = false;
  model.for_each_param([&](const std::string& name, Tensor<double>& t) {
    if (name == "time.agg_proj.w") {
      saw_agg = true;
      CHECK(t.rows() == 128);
      CHECK(t.cols() == 256);
    }
  });
  CHECK(saw_agg);
}

TEST_CASE("token counts across ablations and variants") {
  LgfaConfig cfg;
  CHECK(LgfaModel<float>(cfg, 0).token_count() == 17);

  cfg.ablation = Ablation::kFrameOnly;
  CHECK(LgfaModel<float>(cfg, 0).token_count() == 129);
  CHECK(LgfaModel<float>(cfg, 0).classifier_input_width() == 16);

  cfg.ablation = Ablation::kSegmentOnly;
  CHECK(LgfaModel<float>(cfg, 0).token_count() == 17);

  cfg.ablation = Ablation::kVitSquare;
  CHECK(LgfaModel<float>(cfg, 0).token_count() == 33);

  cfg = LgfaConfig{};
  cfg.variant = Variant::kTimeFrequency;
  CHECK(LgfaModel<float>(cfg, 0).classifier_input_width() == 512);
}

TEST_CASE("class token and position encodings start at exactly zero") {
  LgfaConfig cfg = tiny_config();
  cfg.variant = Variant::kTimeFrequency;
  LgfaModel<double> model(cfg, 99);
  int zero_groups = 0;
  model.for_each_param([&](const std::string& name, Tensor<double>& t) {
    const bool aux = name.find("cls_token") != std::string::npos ||
                     name.find("frame_pos") != std::string::npos ||
                     name.find("seg_pos") != std::string::npos;
    if (!aux) return;
    ++zero_groups;
    for (double v : t.values()) CHECK(v == 0.0);
  });
  CHECK(zero_groups == 6);  // three per branch
}

TEST_CASE("zero-init equivalence: aux terms removed vs present, bitwise") {
  for (auto variant : {Variant::kTime, Variant::kFrequency, Variant::kTimeFrequency}) {
    LgfaConfig cfg = tiny_config();
    cfg.variant = variant;
    LgfaModel<double> model(cfg, 1234);
    Spectrogram spec = random_spectrogram(cfg, 5);

    Tensor<double> with_aux = model.forward(spec);
    ForwardOptions<double> opt;
    opt.include_aux = false;
    Tensor<double> without_aux = model.forward(spec, opt);
    REQUIRE(with_aux.numel() == without_aux.numel());
    for (std::size_t i = 0; i < with_aux.numel(); ++i) {
      // Bitwise comparison, not approximate.
      CHECK(std::memcmp(&with_aux.values()[i], &without_aux.values()[i], sizeof(double)) == 0);
    }
  }
}

TEST_CASE("residual identity: zeroed block internals make both stacks the identity") {
  LgfaConfig cfg = tiny_config();
  LgfaModel<double> model(cfg, 7);
  zero_params_matching(model, "_block");

  Spectrogram spec = random_spectrogram(cfg, 11);
  ForwardTrace<double> trace;
  ForwardOptions<double> opt;
  opt.trace = &trace;
  model.forward(spec, opt);

  // Frame stack: output equals input with zero deviation.
  REQUIRE(trace.time.frame_encoded.numel() == trace.time.frame_embeddings.numel());
  for (std::size_t i = 0; i < trace.time.frame_encoded.numel(); ++i) {
    CHECK(std::abs(trace.time.frame_encoded.values()[i] -
                   trace.time.frame_embeddings.values()[i]) == 0.0);
  }
  // Segment stack likewise.
  REQUIRE(trace.time.segment_encoded.numel() == trace.time.segment_combined.numel());
  for (std::size_t i = 0; i < trace.time.segment_encoded.numel(); ++i) {
    CHECK(std::abs(trace.time.segment_encoded.values()[i] -
                   trace.time.segment_combined.values()[i]) == 0.0);
  }
}

TEST_CASE("zero frame path and zero aggregation bias leave pure segment embeddings") {
  LgfaConfig cfg = tiny_config();
  LgfaModel<double> model(cfg, 21);
  // x-hat becomes exactly zero; agg projection of zero with zero bias is zero.
  zero_params_matching(model, "frame_proj");
  zero_params_matching(model, "frame_block");
  zero_params_matching(model, "agg_proj.b");

  Spectrogram spec = random_spectrogram(cfg, 3);
  ForwardTrace<double> trace;
  ForwardOptions<double> opt;
  opt.trace = &trace;
  model.forward(spec, opt);

  const auto& tokens = trace.time.segment_combined;  // [cls ; s''] + e^s
  const auto& seg = trace.time.segment_embeddings;   // s'
  REQUIRE(tokens.rows() == seg.rows() + 1);
  for (int j = 0; j < tokens.cols(); ++j) {
    CHECK(tokens.at(0, j) == 0.0);  // zero-init class token + zero-init e^s
  }
  for (int i = 0; i < seg.rows(); ++i) {
    for (int j = 0; j < seg.cols(); ++j) {
      CHECK(tokens.at(i + 1, j) == seg.at(i, j));
    }
  }
}

TEST_CASE("zero spectrogram with zero projection bias embeds to zero") {
  LgfaConfig cfg = tiny_config();
  LgfaModel<double> model(cfg, 13);
  zero_params_matching(model, "frame_proj.b");
  Spectrogram silent;
  silent.mel_bins = cfg.mel_bins;
  silent.frames = cfg.frames;
  silent.channels = 1;
  silent.values.assign(static_cast<std::size_t>(cfg.mel_bins) * cfg.frames, 0.0f);

  ForwardTrace<double> trace;
  ForwardOptions<double> opt;
  opt.trace = &trace;
  model.forward(silent, opt);
  for (double v : trace.time.frame_embeddings.values()) CHECK(v == 0.0);
}

TEST_CASE("frame stack is permutation-equivariant when position encodings stay zero") {
  LgfaConfig cfg = tiny_config();
  LgfaModel<double> model(cfg, 17);  // frame_pos is zero at init
  Spectrogram spec = random_spectrogram(cfg, 23);

  ForwardTrace<double> trace;
  ForwardOptions<double> opt;
  opt.trace = &trace;
  model.forward(spec, opt);

  // Permute the frames of the input and re-run.
  std::vector<int> perm{5, 2, 7, 0, 3, 6, 1, 4};
  Spectrogram permuted = spec;
  for (int f = 0; f < cfg.mel_bins; ++f) {
    for (int t = 0; t < cfg.frames; ++t) {
      permuted.at(f, t, 0) = spec.at(f, perm[t], 0);
    }
  }
  ForwardTrace<double> ptrace;
  ForwardOptions<double> popt;
  popt.trace = &ptrace;
  model.forward(permuted, popt);

  for (int t = 0; t < cfg.frames; ++t) {
    for (int j = 0; j < cfg.frame_dim; ++j) {
      CHECK(std::abs(ptrace.time.frame_encoded.at(t, j) -
                     trace.time.frame_encoded.at(perm[t], j)) < 1e-6);
    }
  }
}

TEST_CASE("forward is deterministic for a fixed seed") {
  LgfaConfig cfg = tiny_config();
  Spectrogram spec = random_spectrogram(cfg, 2);
  LgfaModel<double> a(cfg, 77);
  LgfaModel<double> b(cfg, 77);
  Tensor<double> la = a.forward(spec);
  Tensor<double> lb = b.forward(spec);
  for (std::size_t i = 0; i < la.numel(); ++i) CHECK(la.values()[i] == lb.values()[i]);

  LgfaModel<double> c(cfg, 78);
  Tensor<double> lc = c.forward(spec);
  bool any_diff = false;
  for (std::size_t i = 0; i < la.numel(); ++i) {
    if (la.values()[i] != lc.values()[i]) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("every parameter group receives a nonzero gradient across seeds") {
  LgfaConfig cfg = tiny_config();
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    LgfaModel<double> model(cfg, seed);
    Spectrogram spec = random_spectrogram(cfg, seed + 100);
    Tensor<double> loss = cross_entropy_mean(model.forward(spec), std::vector<int>{1});
    backward(loss);
    model.for_each_param([&](const std::string& name, Tensor<double>& t) {
      INFO("seed ", seed, " param ", name);
      REQUIRE(t.has_grad());
      bool any_nonzero = false;
      for (double g : t.grad()) {
        if (g != 0.0) any_nonzero = true;
      }
      CHECK(any_nonzero);
    });
  }
}

TEST_CASE("end-to-end gradients match finite differences on the reduced model") {
  GradCheckSettings settings;
  settings.rel_tol = 1e-3;
  auto c = end_to_end_grad_case(2024);
  auto res = run_grad_check(c, settings);
  INFO("max rel err ", res.max_rel_err, " at ", res.worst_param, "[", res.worst_index, "]");
  CHECK(res.passed);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("frequency variant on a transposed grid matches the time variant") {
  // Time model on grid G == frequency model on G transposed, once parameters
  // are copied across; checks the parameter mapping and the transpose path.
  LgfaConfig time_cfg = tiny_config();
  time_cfg.mel_bins = 6;
  time_cfg.frames = 4;
  time_cfg.frames_per_segment = 2;

  LgfaConfig freq_cfg = tiny_config();
  freq_cfg.variant = Variant::kFrequency;
  freq_cfg.mel_bins = 4;
  freq_cfg.frames = 6;
  freq_cfg.bands_per_segment = 2;

  LgfaModel<double> time_model(time_cfg, 31);
  LgfaModel<double> freq_model(freq_cfg, 32);

  // Copy parameters by registry order; geometries agree by construction.
  auto src = time_model.named_params();
  auto dst = freq_model.named_params();
  REQUIRE(src.size() == dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    REQUIRE(src[i].second.shape() == dst[i].second.shape());
    auto s = src[i].second.values();
    auto d = dst[i].second.values();
    std::copy(s.begin(), s.end(), d.begin());
  }

  Spectrogram spec_time = random_spectrogram(time_cfg, 55);
  Spectrogram spec_freq;
  spec_freq.mel_bins = freq_cfg.mel_bins;
  spec_freq.frames = freq_cfg.frames;
  spec_freq.channels = 1;
  spec_freq.values.resize(spec_time.values.size());
  // Transpose: band b of the frequency grid is frame b of the time grid.
  for (int b = 0; b < freq_cfg.mel_bins; ++b) {
    for (int t = 0; t < freq_cfg.frames; ++t) {
      spec_freq.at(b, t, 0) = spec_time.at(t, b, 0);
    }
  }

  Tensor<double> lt = time_model.forward(spec_time);
  Tensor<double> lf = freq_model.forward(spec_freq);
  REQUIRE(lt.numel() == lf.numel());
  for (std::size_t i = 0; i < lt.numel(); ++i) CHECK(lt.values()[i] == lf.values()[i]);
}

TEST_CASE("time-frequency variant concatenates two branch class tokens") {
  LgfaConfig cfg = tiny_config();
  cfg.variant = Variant::kTimeFrequency;
  LgfaModel<double> model(cfg, 3);
  CHECK(model.classifier_input_width() == 2 * cfg.segment_dim);
  Spectrogram spec = random_spectrogram(cfg, 5);
  Tensor<double> logits = model.forward(spec);
  CHECK(logits.cols() == cfg.n_classes);

  // Branch parameters are disjoint: perturbing the frequency branch changes
  // the logits even with the time branch untouched.
  model.for_each_param([&](const std::string& name, Tensor<double>& t) {
    if (name.rfind("freq.seg_proj.w", 0) == 0) {
      auto v = t.values();
      v[0] += 1.0;
    }
  });
  Tensor<double> logits2 = model.forward(spec);
  bool changed = false;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    if (logits.values()[i] != logits2.values()[i]) changed = true;
  }
  CHECK(changed);
}

TEST_CASE("forward rejects a feature block of the wrong shape") {
  LgfaConfig cfg = tiny_config();
  LgfaModel<double> model(cfg, 1);
  Spectrogram bad;
  bad.mel_bins = 4;
  bad.frames = 8;
  bad.channels = 1;
  bad.values.assign(32, 0.0f);
  CHECK_THROWS_AS(model.forward(bad), ShapeError);
}

TEST_CASE("checkpoint round trip preserves parameters and predictions") {
  lgfa_test::TempDir dir("ckpt");
  LgfaConfig cfg = tiny_config();
  cfg.variant = Variant::kTimeFrequency;
  LgfaModel<float> model(cfg, 404);
  Spectrogram spec = random_spectrogram(cfg, 9);
  Tensor<float> before = model.forward(spec);

  const auto path = dir.path() / "model.ckpt";
  save_checkpoint(path, model);
  LgfaModel<float> restored = load_checkpoint<float>(path);
  CHECK(restored.config().variant == Variant::kTimeFrequency);

  Tensor<float> after = restored.forward(spec);
  REQUIRE(before.numel() == after.numel());
  for (std::size_t i = 0; i < before.numel(); ++i) {
    CHECK(before.values()[i] == after.values()[i]);
  }
}

TEST_CASE("checkpoint loader rejects corrupted containers") {
  lgfa_test::TempDir dir("ckptbad");
  const auto path = dir.path() / "model.ckpt";
  LgfaConfig cfg = tiny_config();
  LgfaModel<float> model(cfg, 5);
  save_checkpoint(path, model);

  // Truncate the payload.
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);

  std::ofstream os(dir.path() / "junk.ckpt", std::ios::binary);
  os << "NOTACHECKPOINT";
  os.close();
  CHECK_THROWS_AS(load_checkpoint<float>(dir.path() / "junk.ckpt"), IoError);
}
