#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "nerfrm/field.hpp"

using namespace nerfrm;

namespace {

MlpConfig tiny_config() {
  MlpConfig cfg;
  cfg.trunk_depth = 8;
  cfg.trunk_width = 2;
  cfg.head_depth = 4;
  cfg.head_width = 2;
  cfg.enc_levels_pos = 1;
  cfg.enc_levels_dir = 1;
  cfg.frames = 3;
  return cfg;
}

Aabb unit_bounds() { return Aabb{Eigen::Vector3d(-1, -1, -1), Eigen::Vector3d(1, 1, 1)}; }

}  // namespace

TEST_CASE("positional encoding anchors") {
  {
    // origin, L=2: raw zeros, sin block 0, cos block 1
    Array enc = positional_encode(Array(1, 3), 2);
    CHECK(enc.cols == 3 + 6 * 2);
    for (int j = 0; j < 3; ++j) CHECK(enc.v[j] == 0.0);
    for (int l = 0; l < 2; ++l)
      for (int a = 0; a < 3; ++a) {
        CHECK(enc.v[3 + 6 * l + a] == 0.0);        // sin
        CHECK(enc.v[3 + 6 * l + 3 + a] == 1.0);    // cos
      }
  }
  {
    // L=0 is the identity
    Array pts = Array::from({0.3, -0.2, 0.9}, 1, 3);
    Array enc = positional_encode(pts, 0);
    CHECK(enc.cols == 3);
    for (int j = 0; j < 3; ++j) CHECK(enc.v[j] == pts.v[j]);
  }
  {
    // p=(0.5,0,0), L=1: sin block (1,0,0), cos block (0,1,1)
    Array enc = positional_encode(Array::from({0.5, 0.0, 0.0}, 1, 3), 1);
    CHECK(enc.v[3] == doctest::Approx(1.0));
    CHECK(enc.v[4] == 0.0);
    CHECK(enc.v[5] == 0.0);
    CHECK(enc.v[6] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(enc.v[7] == 1.0);
    CHECK(enc.v[8] == 1.0);
  }
}

TEST_CASE("query_field output ranges and direction invariance") {
  FieldParams params = init_field(tiny_config(), unit_bounds(), 42);
  Eigen::Vector3d x(0.2, -0.3, 0.4);
  Rng rng(5);
  PointSample ref = query_field(params, x, Eigen::Vector3d(0, 0, 1));
  CHECK(ref.sigma >= 0.0);
  for (int c = 0; c < 3; ++c) {
    CHECK(ref.rgb[c] > 0.0);
    CHECK(ref.rgb[c] < 1.0);
  }
  for (int i = 0; i < 20; ++i) {
    Eigen::Vector3d d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    d.normalize();
    PointSample s = query_field(params, x, d);
    CHECK(s.sigma == ref.sigma);           // density never sees the direction
    for (int c = 0; c < 3; ++c) CHECK(s.rgb_mv[c] == ref.rgb_mv[c]);
  }
}

TEST_CASE("confidence anchors and uncertainty floor") {
  FieldParams params = init_field(tiny_config(), unit_bounds(), 1);
  CHECK(params.confidence(0) == 1.0);  // u_n initialized to 0
  params.u_raw.v[1] = std::log(2.0);
  CHECK(params.confidence(1) == doctest::Approx(0.5));
  params.u_raw.v[2] = -5.0;  // relu floor keeps u_n >= 0
  CHECK(params.uncertainty(2) == 0.0);
  CHECK(params.confidence(2) == 1.0);
  CHECK_THROWS(params.confidence(99));
  params.u_raw.v[1] = 200.0;
  CHECK(params.confidence(1) >= 0.0);
  CHECK(params.confidence(1) < 1e-80);
}

TEST_CASE("MV head gradient never reaches trunk or density") {
  FieldParams params = init_field(tiny_config(), unit_bounds(), 3);
  Array pos = Array::from({0.1, 0.2, -0.3, -0.4, 0.0, 0.6}, 2, 3);
  Array dir = Array::from({0, 0, 1, 1, 0, 0}, 2, 3);

  auto trunk_grads = [&](bool include_mv_loss) {
    ad::Tape tape;
    FieldVars vars = bind_field(tape, params, true);
    FieldOutputs out = field_forward(tape, vars, params, pos, dir);
    ad::Var loss = tape.sum(tape.square(out.rgb));
    loss = tape.add(loss, tape.sum(out.sigma));
    if (include_mv_loss) loss = tape.add(loss, tape.sum(tape.square(out.rgb_mv)));
    tape.backward(loss);
    std::vector<Array> grads;
    for (auto v : vars.trunk_w) grads.push_back(tape.grad(v));
    for (auto v : vars.trunk_b) grads.push_back(tape.grad(v));
    grads.push_back(tape.grad(vars.density_w));
    grads.push_back(tape.grad(vars.density_b));
    return grads;
  };

  auto with_mv = trunk_grads(true);
  auto without_mv = trunk_grads(false);
  REQUIRE(with_mv.size() == without_mv.size());
  for (size_t i = 0; i < with_mv.size(); ++i)
    for (int64_t j = 0; j < with_mv[i].size(); ++j)
      CHECK(with_mv[i].v[j] == without_mv[i].v[j]);  // bit-identical
}

TEST_CASE("miniature full-field gradient check") {
  // finite differences need the stop-gradient bypass: the detached paths are
  // invisible to forward perturbation
  MlpConfig cfg = tiny_config();
  Aabb bounds = unit_bounds();
  Rng rng(17);
  Array pos(4, 3), dir(4, 3);
  for (int64_t i = 0; i < pos.size(); ++i) pos.v[i] = rng.uniform(-0.8, 0.8);
  for (int64_t r = 0; r < 4; ++r) {
    Eigen::Vector3d d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    d.normalize();
    for (int a = 0; a < 3; ++a) dir.at(r, a) = d[a];
  }

  FieldParams proto = init_field(cfg, bounds, 11);
  std::vector<Array> leaves;
  proto.for_each_param([&](const std::string&, Array& a) { leaves.push_back(a); });

  auto build = [&](ad::Tape& t, const std::vector<ad::Var>& vs) {
    // rebuild handles in for_each_param order: interleaved w/b pairs
    FieldVars vars;
    size_t j = 0;
    for (size_t l = 0; l < proto.trunk_w.size(); ++l) {
      vars.trunk_w.push_back(vs[j++]);
      vars.trunk_b.push_back(vs[j++]);
    }
    vars.density_w = vs[j++];
    vars.density_b = vs[j++];
    for (size_t l = 0; l < proto.color_w.size(); ++l) {
      vars.color_w.push_back(vs[j++]);
      vars.color_b.push_back(vs[j++]);
    }
    for (size_t l = 0; l < proto.mv_w.size(); ++l) {
      vars.mv_w.push_back(vs[j++]);
      vars.mv_b.push_back(vs[j++]);
    }
    vars.u_raw = vs[j++];
    FieldOutputs out = field_forward(t, vars, proto, pos, dir, /*stop_grads=*/false);
    ad::Var loss = t.sum(t.square(out.rgb));
    loss = t.add(loss, t.sum(t.square(out.rgb_mv)));
    loss = t.add(loss, t.sum(t.square(out.sigma)));
    return loss;
  };

  double err = ad::grad_check(build, leaves, 1e-4);
  CHECK(err < 1e-4);
}

TEST_CASE("checkpoint round-trip is lossless") {
  MlpConfig cfg = tiny_config();
  FieldParams params = init_field(cfg, unit_bounds(), 99);
  params.u_raw.v[0] = 0.123456789012345;
  params.u_raw.v[1] = -0.5;
  std::string path = "/tmp/nerfrm_test_ckpt.bin";
  save_checkpoint(params, path);
  FieldParams loaded = load_checkpoint(path);

  CHECK(loaded.cfg.trunk_depth == cfg.trunk_depth);
  CHECK(loaded.cfg.frames == cfg.frames);
  CHECK(loaded.scene_lo == params.scene_lo);
  CHECK(loaded.scene_hi == params.scene_hi);
  bool identical = true;
  std::vector<const Array*> a_list, b_list;
  params.for_each_param([&](const std::string&, Array& a) { a_list.push_back(&a); });
  loaded.for_each_param([&](const std::string&, Array& a) { b_list.push_back(&a); });
  REQUIRE(a_list.size() == b_list.size());
  for (size_t i = 0; i < a_list.size(); ++i) {
    REQUIRE(a_list[i]->size() == b_list[i]->size());
    for (int64_t j = 0; j < a_list[i]->size(); ++j)
      if (a_list[i]->v[j] != b_list[i]->v[j]) identical = false;
  }
  CHECK(identical);
  std::remove(path.c_str());
}
