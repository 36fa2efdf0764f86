#include "nerfrm/field.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace nerfrm {

namespace {

constexpr uint32_t kCheckpointMagic = 0x4d52464eu;  // "NFRM"
constexpr uint32_t kCheckpointVersion = 1;

Array uniform_init(Rng& rng, int64_t fan_in, int64_t fan_out) {
  Array w(fan_in, fan_out);
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& x : w.v) x = rng.uniform(-bound, bound);
  return w;
}

void init_mlp_weights(FieldParams& p, uint64_t seed) {
  const MlpConfig& cfg = p.cfg;
  Rng rng = Rng::keyed(seed, /*tag=*/0x11);

  p.trunk_w.clear();
  p.trunk_b.clear();
  int in_dim = cfg.pos_dim();
  for (int l = 0; l < cfg.trunk_depth; ++l) {
    int d_in = (l == 0) ? in_dim : cfg.trunk_width;
    if (cfg.has_skip() && l == cfg.skip_layer) d_in = cfg.trunk_width + in_dim;
    p.trunk_w.push_back(uniform_init(rng, d_in, cfg.trunk_width));
    p.trunk_b.push_back(uniform_init(rng, 1, cfg.trunk_width));
  }
  p.density_w = uniform_init(rng, cfg.trunk_width, 1);
  p.density_b = uniform_init(rng, 1, 1);

  auto init_head = [&](std::vector<Array>& w, std::vector<Array>& b, int head_in) {
    w.clear();
    b.clear();
    for (int l = 0; l < cfg.head_depth; ++l) {
      int d_in = (l == 0) ? head_in : cfg.head_width;
      w.push_back(uniform_init(rng, d_in, cfg.head_width));
      b.push_back(uniform_init(rng, 1, cfg.head_width));
    }
    w.push_back(uniform_init(rng, cfg.head_width, 3));
    b.push_back(uniform_init(rng, 1, 3));
  };
  init_head(p.color_w, p.color_b, cfg.trunk_width + cfg.dir_dim());
  init_head(p.mv_w, p.mv_b, cfg.trunk_width);
}

}  // namespace

void FieldParams::for_each_param(const std::function<void(const std::string&, Array&)>& fn) {
  for (size_t l = 0; l < trunk_w.size(); ++l) {
    fn("trunk_w" + std::to_string(l), trunk_w[l]);
    fn("trunk_b" + std::to_string(l), trunk_b[l]);
  }
  fn("density_w", density_w);
  fn("density_b", density_b);
  for (size_t l = 0; l < color_w.size(); ++l) {
    fn("color_w" + std::to_string(l), color_w[l]);
    fn("color_b" + std::to_string(l), color_b[l]);
  }
  for (size_t l = 0; l < mv_w.size(); ++l) {
    fn("mv_w" + std::to_string(l), mv_w[l]);
    fn("mv_b" + std::to_string(l), mv_b[l]);
  }
  fn("u_raw", u_raw);
}

double FieldParams::uncertainty(int n) const {
  NERFRM_CHECK(n >= 0 && n < u_raw.rows, "unknown frame index " << n);
  return std::max(0.0, u_raw.v[n]);
}

double FieldParams::confidence(int n) const { return std::exp(-uncertainty(n)); }

FieldParams init_field(const MlpConfig& cfg, const Aabb& scene_bounds, uint64_t seed) {
  FieldParams p;
  p.cfg = cfg;
  p.scene_lo = scene_bounds.lo;
  p.scene_hi = scene_bounds.hi;
  p.u_raw = Array(std::max(1, cfg.frames), 1);
  init_mlp_weights(p, seed);
  return p;
}

void reinit_mlp(FieldParams& params, uint64_t seed) { init_mlp_weights(params, seed); }

Array positional_encode(const Array& pts, int levels) {
  NERFRM_CHECK(pts.cols == 3, "positional_encode expects [P,3]");
  NERFRM_CHECK(levels >= 0, "encoding levels must be >= 0");
  const int64_t P = pts.rows;
  const int64_t out_cols = 3 + 6 * levels;
  Array out(P, out_cols);
  parallel_for(P, 2048, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) {
      const double* p = pts.data() + r * 3;
      double* o = out.data() + r * out_cols;
      o[0] = p[0];
      o[1] = p[1];
      o[2] = p[2];
      double freq = M_PI;
      for (int l = 0; l < levels; ++l) {
        for (int a = 0; a < 3; ++a) {
          o[3 + 6 * l + a] = std::sin(freq * p[a]);
          o[3 + 6 * l + 3 + a] = std::cos(freq * p[a]);
        }
        freq *= 2.0;
      }
    }
  });
  return out;
}

Array normalize_positions(const FieldParams& params, const Array& pts_world) {
  NERFRM_CHECK(pts_world.cols == 3, "expected [P,3] positions");
  Array out(pts_world.rows, 3);
  Eigen::Vector3d span = params.scene_hi - params.scene_lo;
  for (int a = 0; a < 3; ++a)
    NERFRM_CHECK(span[a] > 0, "degenerate scene bounds on axis " << a);
  for (int64_t r = 0; r < pts_world.rows; ++r)
    for (int a = 0; a < 3; ++a)
      out.at(r, a) = 2.0 * (pts_world.at(r, a) - params.scene_lo[a]) / span[a] - 1.0;
  return out;
}

FieldVars bind_field(ad::Tape& tape, FieldParams& params, bool trainable) {
  FieldVars v;
  auto bind = [&](Array& a) { return tape.leaf(a, trainable); };
  for (auto& w : params.trunk_w) v.trunk_w.push_back(bind(w));
  for (auto& b : params.trunk_b) v.trunk_b.push_back(bind(b));
  v.density_w = bind(params.density_w);
  v.density_b = bind(params.density_b);
  for (auto& w : params.color_w) v.color_w.push_back(bind(w));
  for (auto& b : params.color_b) v.color_b.push_back(bind(b));
  for (auto& w : params.mv_w) v.mv_w.push_back(bind(w));
  for (auto& b : params.mv_b) v.mv_b.push_back(bind(b));
  v.u_raw = bind(params.u_raw);
  return v;
}

FieldOutputs field_forward(ad::Tape& tape, const FieldVars& vars, const FieldParams& params,
                           const Array& positions, const Array& dirs, bool stop_grads) {
  const MlpConfig& cfg = params.cfg;
  NERFRM_CHECK(positions.cols == 3 && dirs.cols == 3 && positions.rows == dirs.rows,
               "field_forward expects matching [P,3] positions and dirs");

  ad::Var enc_pos = tape.constant(positional_encode(normalize_positions(params, positions),
                                                    cfg.enc_levels_pos));
  ad::Var enc_dir = tape.constant(positional_encode(dirs, cfg.enc_levels_dir));

  ad::Var h = enc_pos;
  for (int l = 0; l < cfg.trunk_depth; ++l) {
    if (cfg.has_skip() && l == cfg.skip_layer) h = tape.concat_cols(h, enc_pos);
    h = tape.relu(tape.add(tape.matmul(h, vars.trunk_w[l]), vars.trunk_b[l]));
  }
  ad::Var sigma = tape.softplus(tape.add(tape.matmul(h, vars.density_w), vars.density_b));

  auto run_head = [&](ad::Var input, const std::vector<ad::Var>& w, const std::vector<ad::Var>& b) {
    ad::Var x = input;
    for (int l = 0; l < cfg.head_depth; ++l)
      x = tape.relu(tape.add(tape.matmul(x, w[l]), b[l]));
    return tape.sigmoid(tape.add(tape.matmul(x, w[cfg.head_depth]), b[cfg.head_depth]));
  };

  ad::Var rgb = run_head(tape.concat_cols(h, enc_dir), vars.color_w, vars.color_b);
  ad::Var feature_mv = stop_grads ? tape.stop_gradient(h) : h;
  ad::Var rgb_mv = run_head(feature_mv, vars.mv_w, vars.mv_b);

  return FieldOutputs{sigma, h, rgb, rgb_mv};
}

PointSample query_field(FieldParams& params, const Eigen::Vector3d& x, const Eigen::Vector3d& d) {
  NERFRM_CHECK(std::abs(d.norm() - 1.0) < 1e-9, "view direction must be unit length");
  ad::Tape tape;
  FieldVars vars = bind_field(tape, params, false);
  Array pos = Array::from({x.x(), x.y(), x.z()}, 1, 3);
  Array dir = Array::from({d.x(), d.y(), d.z()}, 1, 3);
  FieldOutputs out = field_forward(tape, vars, params, pos, dir);
  PointSample s;
  s.sigma = tape.value(out.sigma).v[0];
  const Array& c = tape.value(out.rgb);
  const Array& m = tape.value(out.rgb_mv);
  s.rgb = {c.v[0], c.v[1], c.v[2]};
  s.rgb_mv = {m.v[0], m.v[1], m.v[2]};
  return s;
}

namespace {

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
  uint32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
int64_t read_i64(std::istream& is) {
  int64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
double read_f64(std::istream& is) {
  double v;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_checkpoint(FieldParams& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  NERFRM_CHECK(os.good(), "cannot open checkpoint for writing: " << path);
  write_u32(os, kCheckpointMagic);
  write_u32(os, kCheckpointVersion);
  const MlpConfig& c = params.cfg;
  for (int v : {c.trunk_depth, c.trunk_width, c.head_depth, c.head_width, c.enc_levels_pos,
                c.enc_levels_dir, c.skip_layer, c.frames})
    write_u32(os, static_cast<uint32_t>(v));
  for (int a = 0; a < 3; ++a) write_f64(os, params.scene_lo[a]);
  for (int a = 0; a < 3; ++a) write_f64(os, params.scene_hi[a]);

  uint32_t count = 0;
  params.for_each_param([&](const std::string&, Array&) { ++count; });
  write_u32(os, count);
  params.for_each_param([&](const std::string& name, Array& a) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_i64(os, a.rows);
    write_i64(os, a.cols);
    os.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(8 * a.size()));
  });
  NERFRM_CHECK(os.good(), "checkpoint write failed: " << path);
}

FieldParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  NERFRM_CHECK(is.good(), "cannot open checkpoint: " << path);
  NERFRM_CHECK(read_u32(is) == kCheckpointMagic, "not a checkpoint file: " << path);
  NERFRM_CHECK(read_u32(is) == kCheckpointVersion, "unsupported checkpoint version");
  MlpConfig cfg;
  cfg.trunk_depth = static_cast<int>(read_u32(is));
  cfg.trunk_width = static_cast<int>(read_u32(is));
  cfg.head_depth = static_cast<int>(read_u32(is));
  cfg.head_width = static_cast<int>(read_u32(is));
  cfg.enc_levels_pos = static_cast<int>(read_u32(is));
  cfg.enc_levels_dir = static_cast<int>(read_u32(is));
  cfg.skip_layer = static_cast<int>(read_u32(is));
  cfg.frames = static_cast<int>(read_u32(is));

  Aabb bounds;
  for (int a = 0; a < 3; ++a) bounds.lo[a] = read_f64(is);
  for (int a = 0; a < 3; ++a) bounds.hi[a] = read_f64(is);

  FieldParams p = init_field(cfg, bounds, /*seed=*/0);
  uint32_t count = read_u32(is);
  uint32_t seen = 0;
  p.for_each_param([&](const std::string& name, Array& a) {
    uint32_t len = read_u32(is);
    std::string stored(len, '\0');
    is.read(stored.data(), len);
    NERFRM_CHECK(stored == name, "checkpoint layout mismatch: expected " << name << " got " << stored);
    int64_t rows = read_i64(is), cols = read_i64(is);
    NERFRM_CHECK(rows == a.rows && cols == a.cols,
                 "checkpoint shape mismatch for " << name << ": [" << rows << "," << cols << "]");
    is.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(8 * a.size()));
    ++seen;
  });
  NERFRM_CHECK(seen == count && is.good(), "truncated checkpoint: " << path);
  return p;
}

}  // namespace nerfrm
