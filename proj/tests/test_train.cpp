#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "lgfa/dataset.hpp"
#include "lgfa/metrics.hpp"
#include "lgfa/optim.hpp"
#include "lgfa/rng.hpp"
#include "lgfa/synth.hpp"
#include "lgfa/train.hpp"
#include "test_util.hpp"

using namespace lgfa;

namespace {

Tensor<double> param_with_grad(std::vector<int> shape, double value, double grad_value) {
  auto t = Tensor<double>::filled(std::move(shape), value);
  t.set_requires_grad(true);
  t.zero_grad();
  auto g = t.grad();
  std::fill(g.begin(), g.end(), grad_value);
  return t;
}

ConfusionMatrix make_confusion(std::vector<std::vector<long long>> rows) {
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (int i = 0; i < cm.n_classes; ++i) {
    for (int j = 0; j < cm.n_classes; ++j) cm.add(i, j, rows[i][j]);
  }
  return cm;
}

DatasetManifest dummy_manifest(int n_speakers, int utterances_per_speaker, int n_classes = 2) {
  DatasetManifest m;
  for (int c = 0; c < n_classes; ++c) m.classes.push_back("class_" + std::to_string(c));
  for (int s = 0; s < n_speakers; ++s) {
    for (int u = 0; u < utterances_per_speaker; ++u) {
      ManifestRecord r;
      r.utterance_id = "spk" + std::to_string(s) + "_u" + std::to_string(u);
      r.speaker_id = "spk" + std::to_string(s);
      r.label = u % n_classes;
      r.feature_paths = {r.utterance_id + ".lgfa"};
      m.records.push_back(std::move(r));
    }
  }
  return m;
}

// Class-separable toy features fed straight into the trainer.
std::vector<LoadedUtterance> toy_utterances(const LgfaConfig& cfg, int n_speakers,
                                            int per_speaker_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LoadedUtterance> out;
  for (int s = 0; s < n_speakers; ++s) {
    for (int c = 0; c < cfg.n_classes; ++c) {
      for (int u = 0; u < per_speaker_class; ++u) {
        LoadedUtterance utt;
        utt.utterance_id =
            "s" + std::to_string(s) + "c" + std::to_string(c) + "u" + std::to_string(u);
        utt.speaker = "spk" + std::to_string(s);
        utt.label = c;
        Spectrogram spec;
        spec.mel_bins = cfg.mel_bins;
        spec.frames = cfg.frames;
        spec.channels = cfg.channels;
        spec.source_id = utt.utterance_id;
        spec.values.resize(static_cast<std::size_t>(cfg.mel_bins) * cfg.frames);
        for (int f = 0; f < cfg.mel_bins; ++f) {
          for (int t = 0; t < cfg.frames; ++t) {
            const double bump = (f % cfg.n_classes == c) ? 2.0 : 0.0;
            spec.at(f, t, 0) = static_cast<float>(bump + 0.3 * rng.normal());
          }
        }
        utt.samples.push_back(std::move(spec));
        out.push_back(std::move(utt));
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("adamw: zero gradient with zero decay leaves parameters unchanged") {
  auto p = param_with_grad({3}, 1.5, 0.0);
  AdamW<double> opt({{"p", p}}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  CHECK(opt.step());
  for (double v : p.values()) CHECK(v == 1.5);
}

TEST_CASE("adamw: first bias-corrected step moves by about the learning rate") {
  auto p = param_with_grad({1}, 1.0, 1.0);
  AdamW<double> opt({{"p", p}}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  opt.step();
  // Hand-computed: m_hat = v_hat = 1, so p' = 1 - 0.1/(1 + 1e-8).
  CHECK(p.values()[0] == doctest::Approx(0.900000001).epsilon(1e-9));
}

TEST_CASE("adamw: decoupled decay with zero gradient multiplies by (1 - lr*wd)") {
  auto p = param_with_grad({4}, 2.0, 0.0);
  AdamW<double> opt({{"p", p}}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.05});
  opt.step();
  for (double v : p.values()) CHECK(v == doctest::Approx(2.0 * (1.0 - 0.1 * 0.05)).epsilon(1e-12));
}

TEST_CASE("adamw: lr = 0 is the identity") {
  auto p = param_with_grad({5}, -0.7, 3.0);
  AdamW<double> opt({{"p", p}}, AdamWConfig{0.0, 0.9, 0.999, 1e-8, 0.01});
  opt.step();
  for (double v : p.values()) CHECK(v == -0.7);
}

TEST_CASE("adamw: non-finite gradients skip the whole step") {
  auto p = param_with_grad({2}, 1.0, 1.0);
  auto q = param_with_grad({2}, 1.0, std::numeric_limits<double>::quiet_NaN());
  AdamW<double> opt({{"p", p}, {"q", q}}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  CHECK_FALSE(opt.step());
  CHECK(opt.skipped_steps() == 1);
  CHECK(opt.step_count() == 0);
  for (double v : p.values()) CHECK(v == 1.0);
  for (double v : q.values()) CHECK(v == 1.0);
}

TEST_CASE("metrics match hand-counted confusion matrices exactly") {
  auto m1 = compute_metrics(make_confusion({{8, 2}, {2, 8}}));
  CHECK(m1.war == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(m1.uar == doctest::Approx(0.8).epsilon(1e-15));

  auto m2 = compute_metrics(make_confusion({{9, 1}, {4, 1}}));
  CHECK(m2.war == doctest::Approx(10.0 / 15.0).epsilon(1e-15));
  CHECK(m2.uar == doctest::Approx(0.55).epsilon(1e-15));

  auto m3 = compute_metrics(make_confusion({{3, 1}, {1, 3}}));
  CHECK(m3.war == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m3.uar == doctest::Approx(0.75).epsilon(1e-15));

  auto m4 = compute_metrics(make_confusion({{5, 0, 0}, {0, 5, 0}, {0, 0, 5}}));
  CHECK(m4.war == 1.0);
  CHECK(m4.uar == 1.0);

  auto m5 = compute_metrics(make_confusion({{2, 3}, {1, 4}}));
  CHECK(m5.war == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(m5.uar == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("metrics exclude absent classes from UAR and flag them") {
  auto m = compute_metrics(make_confusion({{0, 0}, {2, 8}}));
  CHECK(m.war == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(m.uar == doctest::Approx(0.8).epsilon(1e-15));
  REQUIRE(m.excluded_classes.size() == 1);
  CHECK(m.excluded_classes[0] == 0);
}

TEST_CASE("metrics reject an all-zero confusion matrix") {
  CHECK_THROWS_AS(compute_metrics(ConfusionMatrix(3)), MetricsError);
}

TEST_CASE("balanced row sums make WAR equal UAR") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + rng.below(4);
    const long long row_total = 20 + rng.below(30);
    ConfusionMatrix cm(n);
    for (int i = 0; i < n; ++i) {
      long long left = row_total;
      for (int j = 0; j < n - 1; ++j) {
        const long long v = rng.below(static_cast<int>(left + 1));
        cm.add(i, j, v);
        left -= v;
      }
      cm.add(i, n - 1, left);
    }
    const auto m = compute_metrics(cm);
    CHECK(std::abs(m.war - m.uar) < 1e-12);
  }
}

TEST_CASE("UAR is invariant under uniform duplication of every sample") {
  auto base = make_confusion({{7, 2, 1}, {3, 5, 2}, {0, 4, 6}});
  const auto m1 = compute_metrics(base);
  ConfusionMatrix scaled(base.n_classes);
  for (int i = 0; i < base.n_classes; ++i) {
    for (int j = 0; j < base.n_classes; ++j) scaled.add(i, j, 9 * base.at(i, j));
  }
  const auto m2 = compute_metrics(scaled);
  CHECK(m1.uar == doctest::Approx(m2.uar).epsilon(1e-15));
  CHECK(m1.war == doctest::Approx(m2.war).epsilon(1e-15));
}

TEST_CASE("loso split partitions by speaker with the expected ratios") {
  for (int n_speakers : {4, 10}) {
    auto manifest = dummy_manifest(n_speakers, 6);
    auto folds = loso_split(manifest);
    REQUIRE(static_cast<int>(folds.size()) == n_speakers);

    std::set<int> seen_test;
    for (const auto& fold : folds) {
      std::set<std::string> train_speakers, test_speakers;
      for (int i : fold.train_indices) train_speakers.insert(manifest.records[i].speaker_id);
      for (int i : fold.test_indices) {
        test_speakers.insert(manifest.records[i].speaker_id);
        CHECK(seen_test.insert(i).second);  // pairwise disjoint test folds
      }
      CHECK(test_speakers == std::set<std::string>{fold.test_speaker});
      CHECK(static_cast<int>(train_speakers.size()) == n_speakers - 1);
      CHECK(train_speakers.count(fold.test_speaker) == 0);
      // No utterance on both sides.
      for (int i : fold.train_indices) CHECK(manifest.records[i].speaker_id != fold.test_speaker);
    }
    // Union of test folds is the whole manifest.
    CHECK(seen_test.size() == manifest.records.size());
  }
}

TEST_CASE("loso split refuses a single speaker") {
  auto manifest = dummy_manifest(1, 5);
  CHECK_THROWS_AS(loso_split(manifest), ConfigError);
}

TEST_CASE("manifest round trip and validation") {
  lgfa_test::TempDir dir("manifest");
  auto manifest = dummy_manifest(3, 4);
  const auto path = dir.path() / "manifest.jsonl";
  save_manifest(path, manifest);
  auto loaded = load_manifest(path);
  CHECK(loaded.classes == manifest.classes);
  REQUIRE(loaded.records.size() == manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    CHECK(loaded.records[i].utterance_id == manifest.records[i].utterance_id);
    CHECK(loaded.records[i].speaker_id == manifest.records[i].speaker_id);
    CHECK(loaded.records[i].label == manifest.records[i].label);
    CHECK(loaded.records[i].feature_paths == manifest.records[i].feature_paths);
  }

  DatasetManifest bad = manifest;
  bad.records[0].label = 99;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = manifest;
  bad.records[1].feature_paths.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train config validation and round trip") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.learning_rate == 1e-4);
  CHECK(cfg.batch_size == 64);

  TrainConfig bad;
  bad.precision = "f16";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"nope", 1}}), ConfigError);
  CHECK(TrainConfig::from_json(TrainConfig{}.to_json()).batch_size == 64);
}

TEST_CASE("synthetic corpus is seed-deterministic and counts records") {
  lgfa_test::TempDir dir_a("synth_a");
  lgfa_test::TempDir dir_b("synth_b");
  SynthConfig cfg;
  cfg.n_speakers = 2;
  cfg.n_classes = 2;
  cfg.utterances_per_class = 3;
  cfg.seed = 7;
  FrontendConfig frontend;

  auto a = synth_dataset(cfg, dir_a.path(), frontend, false);
  auto b = synth_dataset(cfg, dir_b.path(), frontend, false);
  CHECK(a.n_wavs == 2 * 2 * 3);
  CHECK(a.manifest.records.size() == 12);

  // Byte-identical wavs across runs with the same seed.
  for (const auto& rec : a.manifest.records) {
    const auto name = rec.utterance_id + ".wav";
    std::ifstream fa(dir_a.path() / "wav" / name, std::ios::binary);
    std::ifstream fb(dir_b.path() / "wav" / name, std::ios::binary);
    REQUIRE(fa);
    REQUIRE(fb);
    std::string xa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string xb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(xa == xb);
  }

  // Separability self-test beats chance even on the small corpus.
  CHECK(centroid_loso_accuracy(a.manifest) > 0.5);

  // Every feature file is the configured shape.
  for (const auto& rec : a.manifest.records) {
    for (const auto& rel : rec.feature_paths) {
      auto spec = read_feature_file(a.manifest.resolve(rel));
      CHECK(spec.mel_bins == 64);
      CHECK(spec.frames == 128);
      CHECK(spec.channels == 1);
    }
  }
}

TEST_CASE("different seeds give different corpora") {
  lgfa_test::TempDir dir_a("synth_s1");
  lgfa_test::TempDir dir_b("synth_s2");
  SynthConfig cfg;
  cfg.n_speakers = 2;
  cfg.n_classes = 2;
  cfg.utterances_per_class = 1;
  FrontendConfig frontend;
  cfg.seed = 1;
  auto a = synth_dataset(cfg, dir_a.path(), frontend, false);
  cfg.seed = 2;
  auto b = synth_dataset(cfg, dir_b.path(), frontend, false);
  const auto name = a.manifest.records[0].utterance_id + ".wav";
  std::ifstream fa(dir_a.path() / "wav" / name, std::ios::binary);
  std::ifstream fb(dir_b.path() / "wav" / name, std::ios::binary);
  std::string xa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string xb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(xa != xb);
}

TEST_CASE("training memorizes a small separable set") {
  LgfaConfig cfg;
  cfg.mel_bins = 8;
  cfg.frames = 8;
  cfg.frames_per_segment = 2;
  cfg.blocks = 1;
  cfg.frame_dim = 4;
  cfg.segment_dim = 8;
  cfg.frame_heads = 2;
  cfg.segment_heads = 2;
  cfg.n_classes = 2;

  // 32 training samples from speaker A, tested on speaker B.
  auto utterances = toy_utterances(cfg, 2, 16, 31337);
  DatasetManifest manifest;
  manifest.classes = {"class_0", "class_1"};

  LosoFold fold;
  fold.test_speaker = "spk1";
  for (int i = 0; i < static_cast<int>(utterances.size()); ++i) {
    (utterances[i].speaker == "spk1" ? fold.test_indices : fold.train_indices).push_back(i);
  }
  REQUIRE(fold.train_indices.size() == 32);

  TrainConfig tcfg;
  tcfg.epochs = 40;
  tcfg.batch_size = 8;
  tcfg.learning_rate = 3e-3;
  tcfg.seed = 5;

  auto outcome = train_fold<double>(utterances, fold, 0, cfg, tcfg);
  REQUIRE(outcome.report.epochs.size() == 40);
  CHECK(outcome.report.epochs.back().train_war >= 0.95);
  // Loss should have dropped substantially from the first epoch.
  CHECK(outcome.report.epochs.back().mean_loss < outcome.report.epochs.front().mean_loss);
  // The held-out speaker is also classified well above chance on this
  // cleanly separable toy set.
  CHECK(outcome.report.war > 0.75);
}

TEST_CASE("losses decrease over epochs on seeded runs") {
  LgfaConfig cfg;
  cfg.mel_bins = 8;
  cfg.frames = 8;
  cfg.frames_per_segment = 2;
  cfg.blocks = 1;
  cfg.frame_dim = 4;
  cfg.segment_dim = 8;
  cfg.frame_heads = 2;
  cfg.segment_heads = 2;
  cfg.n_classes = 2;

  for (std::uint64_t seed : {11u, 12u, 13u}) {
    auto utterances = toy_utterances(cfg, 2, 6, seed * 1000);
    LosoFold fold;
    fold.test_speaker = "spk1";
    for (int i = 0; i < static_cast<int>(utterances.size()); ++i) {
      (utterances[i].speaker == "spk1" ? fold.test_indices : fold.train_indices).push_back(i);
    }
    TrainConfig tcfg;
    tcfg.epochs = 5;
    tcfg.batch_size = 8;
    tcfg.learning_rate = 2e-3;
    tcfg.seed = seed;
    auto outcome = train_fold<double>(utterances, fold, 0, cfg, tcfg);
    CHECK(outcome.report.epochs[4].mean_loss < outcome.report.epochs[0].mean_loss);
  }
}

TEST_CASE("fold training is bit-reproducible and parallel-invariant") {
  lgfa_test::TempDir dir("loso_repro");
  SynthConfig scfg;
  scfg.n_speakers = 2;
  scfg.n_classes = 2;
  scfg.utterances_per_class = 4;
  scfg.seed = 21;
  FrontendConfig frontend;
  auto synth = synth_dataset(scfg, dir.path(), frontend, false);

  LgfaConfig mcfg;
  mcfg.blocks = 1;
  mcfg.frame_dim = 4;
  mcfg.segment_dim = 8;
  mcfg.frame_heads = 2;
  mcfg.segment_heads = 2;
  mcfg.n_classes = 2;

  TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.batch_size = 4;
  tcfg.learning_rate = 1e-3;
  tcfg.seed = 9;

  auto r1 = run_loso<float>(synth.manifest, mcfg, tcfg);
  auto r2 = run_loso<float>(synth.manifest, mcfg, tcfg);
  CHECK(r1.to_json().dump() == r2.to_json().dump());

  TrainConfig parallel = tcfg;
  parallel.parallel_folds = 2;
  auto r3 = run_loso<float>(synth.manifest, mcfg, parallel);
  // parallel_folds only echoes differently in train_config; folds match.
  auto j1 = r1.to_json();
  auto j3 = r3.to_json();
  j1.erase("train_config");
  j3.erase("train_config");
  CHECK(j1.dump() == j3.dump());
}

TEST_CASE("load_utterances rejects shape mismatches against the model config") {
  lgfa_test::TempDir dir("shape");
  Spectrogram small;
  small.mel_bins = 8;
  small.frames = 16;
  small.channels = 1;
  small.values.assign(8 * 16, 0.5f);
  write_feature_file(dir.path() / "u0.lgfa", small);

  DatasetManifest manifest;
  manifest.base_dir = dir.path();
  manifest.classes = {"a", "b"};
  ManifestRecord rec;
  rec.utterance_id = "u0";
  rec.speaker_id = "spk0";
  rec.label = 0;
  rec.feature_paths = {"u0.lgfa"};
  manifest.records.push_back(rec);

  LgfaConfig cfg;  // expects 64x128x1
  CHECK_THROWS_AS(load_utterances(manifest, cfg), ConfigError);
}
