#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "difftraj/checkpoint.hpp"
#include "difftraj/common.hpp"
#include "difftraj/evaluation.hpp"
#include "difftraj/predictor.hpp"
#include "test_support.hpp"

using namespace difftraj;
using namespace difftraj::model;
using diffusion::TrajectoryArray;

namespace {

ModelConfig toy_config(int horizon, bool motion_model = true) {
  ModelConfig cfg;
  cfg.hidden = 8;
  cfg.attention_heads = 2;
  cfg.ped_hidden = 6;
  cfg.ped_depth = 1;
  cfg.horizon = horizon;
  cfg.use_motion_model = motion_model;
  return cfg;
}

TrajectoryArray random_latent(Rng& rng, int agents, int horizon) {
  TrajectoryArray x(agents, horizon);
  x.xy = diffusion::standard_normal(rng, x.xy.rows(), x.xy.cols());
  return x;
}

}  // namespace

TEST_CASE("time embedding: fourier endpoints and frozen bank") {
  Eigen::VectorXd freqs = fourier_frequency_bank(8);
  ad::Mat feats = fourier_features(freqs, 0.0);
  for (int i = 0; i < 8; ++i) {
    CHECK(feats(0, i) == 0.0);        // sin block
    CHECK(feats(0, 8 + i) == 1.0);    // cos block
  }
  CHECK(fourier_frequency_bank(8) == freqs);
  CHECK((fourier_features(freqs, 0.37) - fourier_features(freqs, 0.37)).norm() == 0.0);

  // nearby times map to distinct embeddings on a grid
  for (double a = 0.0; a < 1.0; a += 0.1)
    for (double b = a + 0.05; b <= 1.0; b += 0.1)
      CHECK((fourier_features(freqs, a) - fourier_features(freqs, b)).norm() > 0.0);
}

TEST_CASE("zero-initialized control head gives the constant-velocity rollout") {
  auto sample = testing::make_toy_sample({4, 9, 2}, 4, 6);
  Predictor model(toy_config(6), 11);  // control head zero by default

  Rng rng(3);
  TrajectoryArray x_t = random_latent(rng, 3, 6);
  auto res = model.denoise(x_t, 0.5, sample, sample.condition);
  CHECK(res.controls.xy.cwiseAbs().maxCoeff() == 0.0);
  for (int a = 0; a < 3; ++a) {
    const scene::AgentState& s = sample.init_states[static_cast<size_t>(a)];
    for (int k = 0; k < 6; ++k) {
      Eigen::Vector2d expect = s.position() + s.velocity() * kDt * (k + 1);
      CHECK((res.x0_hat.at(a, k) - expect).norm() < 1e-12);
    }
  }
}

TEST_CASE("vehicle controls satisfy the friction bound for random parameters") {
  ModelConfig cfg = toy_config(5);
  cfg.control_init_scale = 2.0;  // strong random outputs
  Predictor model(cfg, 77);
  auto sample = testing::make_toy_sample({1, 2}, 3, 5);
  Rng rng(5);
  double bound2 = cfg.vehicle.bound() * cfg.vehicle.bound() + 1e-9;
  for (int rep = 0; rep < 20; ++rep) {
    TrajectoryArray x_t = random_latent(rng, 2, 5);
    auto res = model.denoise(x_t, rng.uniform(), sample, sample.condition);
    for (long r = 0; r < res.controls.xy.rows(); ++r)
      CHECK(res.controls.xy.row(r).squaredNorm() <= bound2);
  }
}

TEST_CASE("denoise is permutation-equivariant over agents") {
  ModelConfig cfg = toy_config(4);
  cfg.control_init_scale = 0.5;
  Predictor model(cfg, 21);
  auto sample = testing::make_toy_sample({10, 20, 30}, 4, 4);

  std::map<int64_t, int64_t> id_map{{10, 300}, {20, 100}, {30, 200}};
  std::vector<int> perm{2, 0, 1};  // new target order picks old indices
  auto relabeled = testing::relabel_sample(sample, id_map, perm);

  Rng rng(9);
  TrajectoryArray x_t = random_latent(rng, 3, 4);
  TrajectoryArray x_t_perm = testing::permute_latent(x_t, perm);

  auto out = model.denoise(x_t, 0.3, sample, sample.condition);
  auto out_perm = model.denoise(x_t_perm, 0.3, relabeled, relabeled.condition);
  for (size_t a = 0; a < perm.size(); ++a) {
    CHECK((out_perm.x0_hat.agent_block(static_cast<int>(a)) -
           out.x0_hat.agent_block(perm[a]))
              .cwiseAbs()
              .maxCoeff() < 1e-5);
  }
}

TEST_CASE("with the stripped condition an agent ignores other agents' histories") {
  ModelConfig cfg = toy_config(4);
  cfg.control_init_scale = 0.5;
  Predictor model(cfg, 31);
  auto sample = testing::make_toy_sample({5, 6}, 4, 4);
  auto stripped = scene::strip_to_self_loops(sample.condition);

  Rng rng(13);
  TrajectoryArray x_t = random_latent(rng, 2, 4);
  auto base = model.denoise(x_t, 0.6, sample, stripped);

  // perturb agent 6's features throughout the history (and the latent)
  auto cond2 = stripped;
  for (auto& g : cond2.history.graphs) {
    int row = g.index_of(6);
    if (row >= 0) g.node_features.row(row).array() += 3.7;
  }
  TrajectoryArray x_t2 = x_t;
  x_t2.set_agent_block(1, x_t.agent_block(1).array() + 2.0);
  auto perturbed = model.denoise(x_t2, 0.6, sample, cond2);

  CHECK((perturbed.x0_hat.agent_block(0).array() == base.x0_hat.agent_block(0).array()).all());
  CHECK((perturbed.controls.agent_block(0).array() == base.controls.agent_block(0).array()).all());
}

TEST_CASE("tape training loss equals the reference path, oracle losses are exact") {
  ModelConfig cfg = toy_config(5);
  cfg.control_init_scale = 0.3;
  Predictor model(cfg, 41);
  std::vector<scene::Sample> batch{testing::make_toy_sample({1, 2}, 3, 5),
                                   testing::make_toy_sample({7, 9}, 3, 5)};
  diffusion::DiffusionSchedule sched;

  Rng r1(77), r2(77);
  double tape_loss = model.training_loss(batch, 0.3, r1, sched);
  double ref_loss = diffusion::training_loss_reference(model, batch, 0.3, sched, r2);
  CHECK(tape_loss == doctest::Approx(ref_loss).epsilon(1e-9));

  // oracle denoisers
  struct Oracle : diffusion::Denoiser {
    double offset = 0.0;
    TrajectoryArray predict_clean(const TrajectoryArray& x_t, double, const scene::Sample& s,
                                  const scene::Condition&) const override {
      TrajectoryArray truth = diffusion::ground_truth_array(s);
      truth.xy.array() += offset;
      (void)x_t;
      return truth;
    }
  };
  Oracle perfect;
  Rng r3(5);
  CHECK(diffusion::training_loss_reference(perfect, batch, 0.0, sched, r3) == 0.0);
  Oracle off;
  off.offset = 1.0;
  Rng r4(5);
  CHECK(diffusion::training_loss_reference(off, batch, 0.0, sched, r4) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("condition-drop instrumentation counters") {
  ModelConfig cfg = toy_config(3);
  Predictor model(cfg, 3);
  auto s = testing::make_toy_sample({1, 2}, 3, 3);
  std::vector<const scene::Sample*> batch{&s, &s, &s, &s};
  diffusion::DiffusionSchedule sched;

  Rng rng(1);
  auto none = model.training_step(batch, 0.0, rng, sched);
  CHECK(none.stripped_conditions == 0);
  CHECK(none.full_conditions == 4);
  auto all = model.training_step(batch, 1.0, rng, sched);
  CHECK(all.full_conditions == 0);
  CHECK(all.stripped_conditions == 4);
}

TEST_CASE("end-to-end gradients match finite differences on a 2-agent toy") {
  ModelConfig cfg = toy_config(3);
  cfg.control_init_scale = 0.4;
  Predictor model(cfg, 51);
  // one vehicle and one pedestrian cover both decoder paths
  auto sample = testing::make_toy_sample({3, 8}, 3, 3, /*second_is_pedestrian=*/true);
  std::vector<scene::Sample> batch{sample};
  diffusion::DiffusionSchedule sched;

  auto loss_value = [&]() {
    Rng rng(123);
    return model.training_loss(batch, 0.0, rng, sched);
  };
  model.params().zero_grads();
  {
    Rng rng(123);
    std::vector<const scene::Sample*> ptrs{&sample};
    model.training_step(ptrs, 0.0, rng, sched);
  }

  double num = 0.0, den_fd = 0.0, den_an = 0.0;
  const double h = 1e-6;
  for (ad::Parameter* p : model.params().all()) {
    for (long i = 0; i < p->value.rows(); ++i) {
      for (long j = 0; j < p->value.cols(); ++j) {
        double keep = p->value(i, j);
        p->value(i, j) = keep + h;
        double fp = loss_value();
        p->value(i, j) = keep - h;
        double fm = loss_value();
        p->value(i, j) = keep;
        double fd = (fp - fm) / (2.0 * h);
        double an = p->grad(i, j);
        num += (fd - an) * (fd - an);
        den_fd += fd * fd;
        den_an += an * an;
      }
    }
  }
  double rel = std::sqrt(num) / std::max({std::sqrt(den_fd), std::sqrt(den_an), 1e-12});
  CHECK(rel < 1e-3);
}

TEST_CASE("training is deterministic and frozen at lr=0") {
  auto scenes = scene::generate_synthetic_scenes(scene::SyntheticKind::kStraightLaneChange, 4, 3);
  ModelConfig cfg = toy_config(kHorizon);
  diffusion::DiffusionSchedule sched;

  TrainConfig tc;
  tc.steps = 6;
  tc.batch_size = 2;
  tc.val_interval = 3;
  tc.val_scenes = 2;

  auto r1 = train(scenes, cfg, tc, sched, 99);
  auto r2 = train(scenes, cfg, tc, sched, 99);
  REQUIRE(r1.loss_curve.size() == r2.loss_curve.size());
  for (size_t i = 0; i < r1.loss_curve.size(); ++i) CHECK(r1.loss_curve[i] == r2.loss_curve[i]);

  TrainConfig frozen = tc;
  frozen.learning_rate = 0.0;
  frozen.lr_min_ratio = 0.0;
  auto r3 = train(scenes, cfg, frozen, sched, 99);
  Predictor fresh(cfg, 99);
  const auto& trained = r3.model->params().all();
  const auto& init = fresh.params().all();
  REQUIRE(trained.size() == init.size());
  for (size_t i = 0; i < trained.size(); ++i)
    CHECK((trained[i]->value.array() == init[i]->value.array()).all());
}

TEST_CASE("short overfit run decreases the smoothed loss") {
  auto scenes = scene::generate_synthetic_scenes(scene::SyntheticKind::kStraightLaneChange, 8, 5);
  ModelConfig cfg;
  cfg.hidden = 16;
  cfg.attention_heads = 2;
  diffusion::DiffusionSchedule sched;

  TrainConfig tc;
  tc.steps = 150;
  tc.batch_size = 4;
  tc.val_interval = 75;
  tc.val_scenes = 4;
  auto result = train(scenes, cfg, tc, sched, 7);

  auto window_mean = [&](size_t start, size_t n) {
    double s = 0.0;
    for (size_t i = start; i < start + n; ++i) s += result.loss_curve[i];
    return s / static_cast<double>(n);
  };
  double head = window_mean(0, 30);
  double tail = window_mean(result.loss_curve.size() - 30, 30);
  CHECK(tail < head * 0.7);
}

TEST_CASE("checkpoint round-trip reproduces outputs bitwise") {
  ModelConfig cfg = toy_config(4);
  cfg.control_init_scale = 0.6;
  Predictor model(cfg, 61);
  diffusion::DiffusionSchedule sched;
  sched.sampler = diffusion::SamplerKind::kDdim;
  sched.eta = 0.35;

  std::string path =
      (std::filesystem::temp_directory_path() / "difftraj_ckpt_test.bin").string();
  CheckpointMeta meta{12, 345, 0.123};
  save_checkpoint(path, model, sched, meta);
  auto loaded = load_checkpoint(path);
  CHECK(loaded.meta.steps == 345);
  CHECK(loaded.schedule.eta == 0.35);
  CHECK(loaded.schedule.sampler == diffusion::SamplerKind::kDdim);

  auto sample = testing::make_toy_sample({2, 4}, 4, 4);
  Rng rng(17);
  TrajectoryArray x_t = random_latent(rng, 2, 4);
  auto a = model.denoise(x_t, 0.42, sample, sample.condition);
  auto b = loaded.model->denoise(x_t, 0.42, sample, sample.condition);
  CHECK((a.x0_hat.xy.array() == b.x0_hat.xy.array()).all());
  CHECK((a.controls.xy.array() == b.controls.xy.array()).all());
}

TEST_CASE("agent mismatch raises a contract violation") {
  ModelConfig cfg = toy_config(4);
  Predictor model(cfg, 71);
  auto sample = testing::make_toy_sample({1, 2}, 3, 4);
  Rng rng(1);
  TrajectoryArray wrong = random_latent(rng, 3, 4);
  CHECK_THROWS_AS(model.denoise(wrong, 0.5, sample, sample.condition), ContractViolation);

  scene::Sample bad = sample;
  bad.target_ids.push_back(999);
  bad.init_states.push_back(bad.init_states[0]);
  bad.future.push_back(bad.future[0]);
  TrajectoryArray x3 = random_latent(rng, 3, 4);
  CHECK_THROWS_AS(model.denoise(x3, 0.5, bad, bad.condition), ContractViolation);
}

TEST_CASE("denoise handles agents that enter the window late") {
  // agent 9 is absent from the first two history graphs; its hidden
  // state carries through from zero until it appears
  auto sample = testing::make_toy_sample({4, 9}, 5, 4);
  for (int h = 0; h < 2; ++h) {
    scene::SceneGraph& g = sample.condition.history.graphs[static_cast<size_t>(h)];
    int drop = g.index_of(9);
    REQUIRE(drop >= 0);
    scene::SceneGraph reduced;
    reduced.timestamp = g.timestamp;
    for (int i = 0; i < g.num_nodes(); ++i) {
      if (i == drop) continue;
      reduced.node_ids.push_back(g.node_ids[static_cast<size_t>(i)]);
    }
    reduced.node_features.resize(1, g.node_features.cols());
    reduced.node_features.row(0) = g.node_features.row(drop == 0 ? 1 : 0);
    reduced.edges = {{0, 0}};
    reduced.edge_features.resize(1);
    reduced.edge_features[0] = 0.0;
    g = reduced;
  }

  ModelConfig cfg = toy_config(4);
  cfg.control_init_scale = 0.5;
  Predictor model(cfg, 91);
  Rng rng(7);
  TrajectoryArray x_t = random_latent(rng, 2, 4);
  auto res = model.denoise(x_t, 0.4, sample, sample.condition);
  CHECK(res.x0_hat.xy.allFinite());
  CHECK(res.controls.xy.allFinite());
}
