// Copyright 2026 The activesfm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "asfm/losses.hpp"
#include "asfm/trainer.hpp"

using namespace asfm;

TEST_CASE("loss formulas: photometric, eikonal, mask") {
  MatXd a = MatXd::Constant(4, 3, 0.5), b = MatXd::Constant(4, 3, 0.5);
  CHECK(photometric_loss<double>(a, b) == 0.0);
  b.array() += 0.1;
  CHECK(photometric_loss<double>(a, b) == doctest::Approx(0.1).epsilon(1e-12));
  Rng rng(1);
  MatXd p(6, 3), q(6, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    p.data()[i] = rng.uniform();
    q.data()[i] = rng.uniform();
  }
  double brute = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) brute += std::abs(p.data()[i] - q.data()[i]);
  CHECK(photometric_loss<double>(p, q) == doctest::Approx(brute / p.size()).epsilon(1e-12));

  VecXd norms = VecXd::Ones(10);
  CHECK(eikonal_loss<double>(norms) == 0.0);
  norms.setZero();
  CHECK(eikonal_loss<double>(norms) == 1.0);
  VecXd mixed(2);
  mixed << 0.5, 1.5;
  CHECK(eikonal_loss<double>(mixed) == doctest::Approx(0.25).epsilon(1e-12));

  VecXd acc(1), mask(1);
  acc << 1.0;
  mask << 1.0;
  CHECK(mask_loss<double>(acc, mask) == doctest::Approx(-std::log(1 - 1e-5)).epsilon(1e-6));
  acc << 0.5;
  CHECK(mask_loss<double>(acc, mask) == doctest::Approx(-std::log(0.5)).epsilon(1e-9));
}

namespace {

// A 2-view fixture over an analytic plane scene: images contain a projected
// blob pattern over a dark background.
struct TrainFixture {
  ProjectorRig rig;
  TrainViews views;
  std::vector<SystemPose> poses;
  TrainConfig cfg;
};

PatternImage blob_pattern(int res) {
  PatternImage img = PatternImage::zeros(res, res);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double d2 = (x - res / 2.0) * (x - res / 2.0) + (y - res / 2.0) * (y - res / 2.0);
      img.at(x, y)[1] = std::exp(-d2 / (2 * 16.0));
    }
  return img;
}

TrainFixture make_train_fixture(uint64_t seed, int im = 24) {
  TrainFixture fx;
  fx.rig.camera = make_pinhole(im, im, 60.0);
  Projector p;
  p.intrinsics = make_pinhole(32, 32, 60.0);
  p.rel_trans = Vec3d(0.25, 0, 0);
  p.pattern = blob_pattern(32);
  fx.rig.projectors.push_back(p);

  fx.poses.resize(2);
  fx.poses[0].trans = Vec3d(0.05, 0, -1.6);
  fx.poses[1].trans = Vec3d(-0.05, 0.02, -1.62);
  fx.poses[1].rot = Vec3d(0.0, 0.03, 0.0);

  // ground-truth images: plane at z = 0 lit by the projector blob
  fx.views.width = im;
  fx.views.height = im;
  for (int f = 0; f < 2; ++f) {
    std::vector<float> img(im * im * 3, 0.f), mask(im * im, 1.f);
    const Mat3d R = fx.poses[f].rotation();
    for (int y = 0; y < im; ++y)
      for (int x = 0; x < im; ++x) {
        const Ray ray = backcast_ray(Vec2d(x, y), fx.rig.camera, fx.poses[f], 1.0);
        if (std::abs(ray.direction.z()) < 1e-6) continue;
        const double t = (0.0 - ray.origin.z()) / ray.direction.z();
        if (t <= 0) continue;
        const Vec3d P = ray.origin + t * ray.direction;
        const Vec3d P_cam = R.transpose() * (P - fx.poses[f].trans);
        const Vec3d q = projected_color(P_cam, fx.rig.projectors[0]);
        for (int c = 0; c < 3; ++c)
          img[3 * (y * im + x) + c] = static_cast<float>(clamp(q[c], 0.0, 1.0));
      }
    fx.views.images.push_back(img);
    fx.views.masks.push_back(mask);
  }

  fx.cfg.seed = seed;
  fx.cfg.batch_size = 64;
  fx.cfg.steps = 100;
  fx.cfg.lr = 5e-3;
  fx.cfg.warmup_steps = 10;
  fx.cfg.n_chunks = 4;
  fx.cfg.n_threads = 2;
  fx.cfg.field.encoding.mode = EncodingMode::kHybrid;
  fx.cfg.field.encoding.fourier = {4, true};
  fx.cfg.field.encoding.hash.num_levels = 4;
  fx.cfg.field.encoding.hash.table_size_log2 = 11;
  fx.cfg.field.encoding.hash.base_resolution = 8;
  fx.cfg.field.encoding.hash.per_level_scale = 1.5;
  fx.cfg.field.color_pos_fourier = {4, true};
  fx.cfg.field.dir_fourier = {2, true};
  fx.cfg.field.sdf_hidden = 24;
  fx.cfg.field.sdf_layers = 3;
  fx.cfg.field.sdf_skip = 1;
  fx.cfg.field.feature_dim = 8;
  fx.cfg.field.color_hidden = 24;
  fx.cfg.field.color_layers = 2;
  fx.cfg.render.n_coarse = 12;
  fx.cfg.render.n_fine = 12;
  fx.cfg.render.near = 0.6;
  fx.cfg.render.far = 2.6;
  fx.cfg.render.clip_to_unit_sphere = false;
  return fx;
}

}  // namespace

TEST_CASE("learning rate schedule endpoints") {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.lr_decay = 0.05;
  cfg.warmup_steps = 500;
  cfg.steps = 10000;
  CHECK(learning_rate_at(cfg, 0) == doctest::Approx(1e-3 / 500));
  CHECK(learning_rate_at(cfg, 499) == doctest::Approx(1e-3).epsilon(1e-2));
  CHECK(learning_rate_at(cfg, 500) == doctest::Approx(1e-3).epsilon(1e-9));
  CHECK(learning_rate_at(cfg, 9999) ==
        doctest::Approx(0.05 * 1e-3).epsilon(1e-4));
}

TEST_CASE("train_step: frozen poses stay bit-identical; loss decomposition") {
  TrainFixture fx = make_train_fixture(3);
  fx.cfg.optimize_poses = false;
  auto st = init_train_state<double>(fx.cfg, fx.poses, 1);
  RenderPipeline<double> pipe(fx.rig, fx.cfg.render, 1.0);
  const MatXd rot_before = st.poses.rot, trans_before = st.poses.trans;
  ParamGrads<double> ws;
  ws.init_like(st.fields, 2, 1);
  for (int k = 0; k < 3; ++k) {
    auto batch = draw_ray_batch<double>(fx.views, fx.cfg, st.step);
    const auto loss = train_step(&st, batch, fx.cfg, pipe, &ws);
    CHECK(std::isfinite(loss.total));
  }
  CHECK((st.poses.rot - rot_before).norm() == 0.0);
  CHECK((st.poses.trans - trans_before).norm() == 0.0);

  // lambda = beta = 0 -> total equals the photometric term alone
  TrainFixture fx2 = make_train_fixture(4);
  fx2.cfg.lambda_eikonal = 0.0;
  fx2.cfg.beta_mask = 0.0;
  auto st2 = init_train_state<double>(fx2.cfg, fx2.poses, 1);
  RenderPipeline<double> pipe2(fx2.rig, fx2.cfg.render, 1.0);
  auto batch = draw_ray_batch<double>(fx2.views, fx2.cfg, 0);
  ParamGrads<double> ws2;
  ws2.init_like(st2.fields, 2, 1);
  const auto loss = train_step(&st2, batch, fx2.cfg, pipe2, &ws2);
  CHECK(loss.total == loss.color);
}

TEST_CASE("every enabled learnable group receives gradient on a generic batch") {
  TrainFixture fx = make_train_fixture(5);
  fx.cfg.optimize_projectors = true;
  fx.rig.projectors[0].refine_pose = true;
  auto st = init_train_state<double>(fx.cfg, fx.poses, 1);
  // lift the encoding columns out of their zero init so the hash group is live
  Rng rng(9);
  for (auto& l : st.fields.sdf_mlp.layers)
    for (Eigen::Index i = 0; i < l.W.size(); ++i) l.W.data()[i] += rng.uniform(-0.02, 0.02);
  RenderPipeline<double> pipe(fx.rig, fx.cfg.render, 1.0);
  auto batch = draw_ray_batch<double>(fx.views, fx.cfg, 0);
  ParamGrads<double> grads;
  grads.init_like(st.fields, 2, 1);
  LossWeights lw{fx.cfg.lambda_eikonal, fx.cfg.beta_mask};
  pipe.render_losses(st.fields, st.poses, st.proj_delta, batch, lw, true, true,
                     &grads, nullptr, fx.cfg.n_chunks, 2);
  const auto norms = grad_group_norms(grads);
  for (const auto& [name, norm] : norms) {
    INFO(name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("checkpoint resume reproduces the next step bit-exactly") {
  const std::string dir = std::filesystem::temp_directory_path() / "asfm_ck_test";
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/ck.bin";

  TrainFixture fx = make_train_fixture(6);
  fx.cfg.steps = 6;
  auto st = init_train_state<double>(fx.cfg, fx.poses, 1);
  RenderPipeline<double> pipe(fx.rig, fx.cfg.render, 1.0);
  ParamGrads<double> ws;
  ws.init_like(st.fields, 2, 1);
  // run 3 steps, checkpoint, run 1 more
  for (int k = 0; k < 3; ++k)
    train_step(&st, draw_ray_batch<double>(fx.views, fx.cfg, st.step), fx.cfg, pipe, &ws);
  save_checkpoint(path, st);
  const auto loss_direct =
      train_step(&st, draw_ray_batch<double>(fx.views, fx.cfg, st.step), fx.cfg, pipe, &ws);

  // reload and repeat the 4th step
  auto st2 = init_train_state<double>(fx.cfg, fx.poses, 1);
  load_checkpoint(path, &st2);
  CHECK(st2.step == 3);
  const auto loss_resumed =
      train_step(&st2, draw_ray_batch<double>(fx.views, fx.cfg, st2.step), fx.cfg, pipe, &ws);
  CHECK(loss_direct.total == loss_resumed.total);
  CHECK((st.poses.rot - st2.poses.rot).norm() == 0.0);
  CHECK((st.fields.sdf_mlp.layers[0].W - st2.fields.sdf_mlp.layers[0].W).norm() == 0.0);
  CHECK((st.adam_m.pose_rot - st2.adam_m.pose_rot).norm() == 0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("loss decreases over 500 steps on a 2-view plane scene") {
  // median over 3 seeds
  std::vector<double> ratios;
  for (uint64_t seed : {11ull, 12ull, 13ull}) {
    TrainFixture fx = make_train_fixture(seed);
    fx.cfg.seed = seed;
    fx.cfg.steps = 500;
    fx.cfg.warmup_steps = 50;
    auto st = init_train_state<double>(fx.cfg, fx.poses, 1);
    RenderPipeline<double> pipe(fx.rig, fx.cfg.render, 1.0);
    ParamGrads<double> ws;
    ws.init_like(st.fields, 2, 1);
    double first = 0, last = 0;
    for (int k = 0; k < 500; ++k) {
      const auto loss =
          train_step(&st, draw_ray_batch<double>(fx.views, fx.cfg, st.step), fx.cfg, pipe, &ws);
      if (k < 20) first += loss.color;
      if (k >= 480) last += loss.color;
    }
    ratios.push_back(last / first);
  }
  std::sort(ratios.begin(), ratios.end());
  CHECK(ratios[1] < 1.0);
}

TEST_CASE("variance stays positive through arbitrary gradient steps") {
  TrainFixture fx = make_train_fixture(7);
  auto st = init_train_state<double>(fx.cfg, fx.poses, 1);
  RenderPipeline<double> pipe(fx.rig, fx.cfg.render, 1.0);
  ParamGrads<double> ws;
  ws.init_like(st.fields, 2, 1);
  for (int k = 0; k < 20; ++k) {
    train_step(&st, draw_ray_batch<double>(fx.views, fx.cfg, st.step), fx.cfg, pipe, &ws);
    CHECK(st.fields.sharpness() > 0.0);
    CHECK(std::isfinite(st.fields.sharpness()));
  }
}

TEST_CASE("pose gradient is flat without patterns on a textureless scene") {
  // constant-albedo scene, no illumination: photometric loss carries no pose
  // information; with pattern projection it does
  TrainFixture fx = make_train_fixture(8);
  fx.cfg.lambda_eikonal = 0.0;
  fx.cfg.beta_mask = 0.0;
  fx.cfg.use_mask_loss = false;
  auto st = init_train_state<double>(fx.cfg, fx.poses, 1);
  // sharpen the field so rays saturate inside the init sphere
  st.fields.log_sharpness = std::log(300.0);
  // constant color net: zero weights, bias at logit(0.5) = 0
  for (auto& l : st.fields.color_mlp.layers) {
    l.W.setZero();
    l.b.setZero();
  }
  // constant gt over rays that hit the surface squarely (central pixels):
  // away from the silhouette the accumulated weight saturates and only the
  // pattern term can carry pose information
  RayBatch<double> batch;
  Rng brng(31);
  const int B = 24;
  batch.rays.resize(B);
  batch.gt_color = MatXd::Constant(B, 3, 0.5);
  batch.jitter.resize(B, fx.cfg.render.n_coarse);
  batch.fine_u.resize(B, fx.cfg.render.n_fine);
  for (int i = 0; i < B; ++i) {
    batch.rays[i] = {static_cast<int>(brng.uniform_int(0, 1)),
                     fx.rig.camera.cx + double(brng.uniform_int(-2, 2)),
                     fx.rig.camera.cy + double(brng.uniform_int(-2, 2))};
    for (int k = 0; k < fx.cfg.render.n_coarse; ++k) batch.jitter(i, k) = brng.uniform();
    for (int k = 0; k < fx.cfg.render.n_fine; ++k) batch.fine_u(i, k) = brng.uniform();
  }
  LossWeights lw{0.0, 0.0};
  ParamGrads<double> g1, g2;
  g1.init_like(st.fields, 2, 1);
  g2.init_like(st.fields, 2, 1);
  {
    RenderConfig rc = fx.cfg.render;
    rc.no_sl = true;
    RenderPipeline<double> pipe(fx.rig, rc, 1.0);
    RenderOutputs<double> out;
    pipe.render_losses(st.fields, st.poses, st.proj_delta, batch, lw, true,
                       false, &g1, &out, 4, 2);
    // all rays must hit the surface squarely; silhouette-grazing rays carry
    // genuine pose signal even without patterns
    REQUIRE(out.acc.minCoeff() > 1.0 - 1e-6);
  }
  {
    RenderPipeline<double> pipe(fx.rig, fx.cfg.render, 1.0);
    pipe.render_losses(st.fields, st.poses, st.proj_delta, batch, lw, true,
                       false, &g2, nullptr, 4, 2);
  }
  const double flat = std::sqrt(g1.pose_rot.squaredNorm() + g1.pose_trans.squaredNorm());
  const double lit = std::sqrt(g2.pose_rot.squaredNorm() + g2.pose_trans.squaredNorm());
  CHECK(flat < 1e-8);
  CHECK(lit > 1e-4);
}

TEST_CASE("float32 instantiation trains and roughly matches float64 losses") {
  TrainFixture fx = make_train_fixture(9);
  fx.cfg.steps = 5;
  auto st64 = init_train_state<double>(fx.cfg, fx.poses, 1);
  auto st32 = init_train_state<float>(fx.cfg, fx.poses, 1);
  RenderPipeline<double> p64(fx.rig, fx.cfg.render, 1.0);
  RenderPipeline<float> p32(fx.rig, fx.cfg.render, 1.0);
  ParamGrads<double> w64;
  w64.init_like(st64.fields, 2, 1);
  ParamGrads<float> w32;
  w32.init_like(st32.fields, 2, 1);
  for (int k = 0; k < 5; ++k) {
    const auto l64 =
        train_step(&st64, draw_ray_batch<double>(fx.views, fx.cfg, st64.step), fx.cfg, p64, &w64);
    const auto l32 =
        train_step(&st32, draw_ray_batch<float>(fx.views, fx.cfg, st32.step), fx.cfg, p32, &w32);
    CHECK(double(l32.total) == doctest::Approx(l64.total).epsilon(2e-3));
  }
}
