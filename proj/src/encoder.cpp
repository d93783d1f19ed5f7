#include "fateseg/encoder.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "fateseg/error.hpp"
#include "fateseg/rng.hpp"

using nlohmann::json;

namespace fateseg {

void EncoderSpec::validate() const {
  if (input_size <= 0 || patch <= 0 || channels <= 0)
    fail(Err::ConfigParse, "encoder sizes must be positive");
  if (input_size % patch != 0) fail(Err::ConfigParse, "input_size must be divisible by patch");
  if (kind == EncoderKind::ToyViT) {
    if (depth <= 0 || heads <= 0) fail(Err::ConfigParse, "toyvit depth/heads must be positive");
    if (channels % heads != 0) fail(Err::ConfigParse, "channels must be divisible by heads");
  }
}

std::string EncoderSpec::to_json() const {
  json j;
  j["kind"] = kind == EncoderKind::PatchMean ? "patch_mean" : "toyvit";
  j["input_size"] = input_size;
  j["patch"] = patch;
  j["channels"] = channels;
  j["depth"] = depth;
  j["heads"] = heads;
  j["weight_seed"] = weight_seed;
  return j.dump();
}

EncoderSpec EncoderSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(Err::ConfigParse, std::string("encoder spec: ") + e.what());
  }
  EncoderSpec s;
  try {
    std::string kind = j.value("kind", "patch_mean");
    if (kind == "patch_mean") s.kind = EncoderKind::PatchMean;
    else if (kind == "toyvit") s.kind = EncoderKind::ToyViT;
    else fail(Err::ConfigParse, "unknown encoder kind '" + kind + "'");
    s.input_size = j.value("input_size", 64);
    s.patch = j.value("patch", 8);
    s.channels = j.value("channels", 32);
    s.depth = j.value("depth", 2);
    s.heads = j.value("heads", 4);
    s.weight_seed = j.value("weight_seed", uint64_t(0));
  } catch (const json::exception& e) {
    fail(Err::ConfigParse, std::string("encoder spec: ") + e.what());
  }
  s.validate();
  return s;
}

EncoderSpec EncoderSpec::preset(const std::string& name) {
  EncoderSpec s;
  s.kind = EncoderKind::ToyViT;
  s.input_size = 64;
  s.patch = 8;
  if (name == "tiny") {
    s.channels = 16; s.depth = 1; s.heads = 2;
  } else if (name == "small") {
    s.channels = 32; s.depth = 2; s.heads = 4;
  } else if (name == "base") {
    s.channels = 48; s.depth = 3; s.heads = 4;
  } else if (name == "large") {
    s.channels = 64; s.depth = 4; s.heads = 8;
  } else {
    fail(Err::InvalidAxisValue, "unknown encoder preset '" + name + "'");
  }
  return s;
}

uint64_t EncoderSpec::fingerprint() const { return fnv1a64(to_json()); }

Grid2D resize_slice(const Grid2D& slice, int S) {
  if (S <= 0) fail(Err::ConfigParse, "resize target must be positive");
  if (slice.h <= 0 || slice.w <= 0) fail(Err::NonFiniteInput, "empty slice");
  if (slice.h == S && slice.w == S) return slice;
  Grid2D out(S, S);
  const double sy = double(slice.h) / S;
  const double sx = double(slice.w) / S;
  for (int r = 0; r < S; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), double(slice.h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, slice.h - 1);
    const double wy = fy - y0;
    for (int c = 0; c < S; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), double(slice.w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, slice.w - 1);
      const double wx = fx - x0;
      const double top = slice.at(y0, x0) * (1 - wx) + slice.at(y0, x1) * wx;
      const double bot = slice.at(y1, x0) * (1 - wx) + slice.at(y1, x1) * wx;
      out.at(r, c) = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ToyViT weights
// ---------------------------------------------------------------------------

struct Encoder::VitWeights {
  struct Block {
    std::vector<float> wq, wk, wv, wo;  // d x d
    std::vector<float> w1, w2;          // d x 2d, 2d x d
  };
  std::vector<float> patch_embed;  // p*p x d
  std::vector<float> pos_embed;    // T x d
  std::vector<Block> blocks;
};

namespace {

std::vector<float> seeded_matrix(const std::string& name, uint64_t seed, size_t n) {
  DetRng rng(name, seed);
  std::vector<float> m(n);
  for (float& x : m) x = rng.next_trunc_normal(0.02);
  return m;
}

// out[r,:] += in[r,:] @ W, W is (in_cols x out_cols). Double accumulators,
// fixed left-to-right order.
void matmul_add(const float* in, int rows, int in_cols, const float* w, int out_cols,
                float* out) {
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < out_cols; ++c) {
      double acc = 0.0;
      for (int k = 0; k < in_cols; ++k) acc += double(in[size_t(r) * in_cols + k]) * w[size_t(k) * out_cols + c];
      out[size_t(r) * out_cols + c] += static_cast<float>(acc);
    }
  }
}

void layer_norm(const float* in, int rows, int cols, float* out) {
  for (int r = 0; r < rows; ++r) {
    const float* x = in + size_t(r) * cols;
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += x[c];
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) var += (x[c] - mean) * (x[c] - mean);
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int c = 0; c < cols; ++c) out[size_t(r) * cols + c] = static_cast<float>((x[c] - mean) * inv);
  }
}

void softmax_rows(std::vector<double>& s, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double* row = s.data() + size_t(r) * cols;
    double mx = row[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (int c = 0; c < cols; ++c) row[c] /= sum;
  }
}

}  // namespace

Encoder::Encoder(const EncoderSpec& spec) : spec_(spec) {
  spec_.validate();
  if (spec_.kind != EncoderKind::ToyViT) return;
  const int d = spec_.channels;
  const int p = spec_.patch;
  const int T = grid_dim() * grid_dim();
  vit_ = std::make_unique<VitWeights>();
  vit_->patch_embed = seeded_matrix("toyvit/patch_embed", spec_.weight_seed, size_t(p) * p * d);
  vit_->pos_embed = seeded_matrix("toyvit/pos_embed", spec_.weight_seed, size_t(T) * d);
  for (int l = 0; l < spec_.depth; ++l) {
    VitWeights::Block b;
    const std::string base = "toyvit/block" + std::to_string(l) + "/";
    b.wq = seeded_matrix(base + "wq", spec_.weight_seed, size_t(d) * d);
    b.wk = seeded_matrix(base + "wk", spec_.weight_seed, size_t(d) * d);
    b.wv = seeded_matrix(base + "wv", spec_.weight_seed, size_t(d) * d);
    b.wo = seeded_matrix(base + "wo", spec_.weight_seed, size_t(d) * d);
    b.w1 = seeded_matrix(base + "w1", spec_.weight_seed, size_t(d) * 2 * d);
    b.w2 = seeded_matrix(base + "w2", spec_.weight_seed, size_t(2) * d * d);
    vit_->blocks.push_back(std::move(b));
  }
}

Encoder::~Encoder() = default;
Encoder::Encoder(Encoder&&) noexcept = default;
Encoder& Encoder::operator=(Encoder&&) noexcept = default;

EmbeddingMap Encoder::encode(const Grid2D& slice) const {
  if (slice.h <= 0 || slice.w <= 0) fail(Err::NonFiniteInput, "empty slice");
  for (float x : slice.v)
    if (!std::isfinite(x)) fail(Err::NonFiniteInput, "slice contains NaN/Inf");

  const int S = spec_.input_size, p = spec_.patch, d = spec_.channels;
  const int g = grid_dim();
  const int T = g * g;
  Grid2D rs = resize_slice(slice, S);

  EmbeddingMap em;
  em.gh = em.gw = g;
  em.d = d;
  em.tokens.assign(size_t(T) * d, 0.0f);
  em.src_h = slice.h;
  em.src_w = slice.w;

  if (spec_.kind == EncoderKind::PatchMean) {
    // Eight per-patch statistics: mean, std, four quadrant means, and the mean
    // absolute gradient along x and y. Tiled to d channels, then each token is
    // z-normalized across its channels.
    for (int gr = 0; gr < g; ++gr) {
      for (int gc = 0; gc < g; ++gc) {
        const int r0 = gr * p, c0 = gc * p;
        double sum = 0.0, sum2 = 0.0;
        double quad[4] = {0, 0, 0, 0};
        int qcount[4] = {0, 0, 0, 0};
        double gx = 0.0, gy = 0.0;
        for (int r = 0; r < p; ++r)
          for (int c = 0; c < p; ++c) {
            const double v = rs.at(r0 + r, c0 + c);
            sum += v;
            sum2 += v * v;
            const int qi = (r >= p / 2 ? 2 : 0) + (c >= p / 2 ? 1 : 0);
            quad[qi] += v;
            ++qcount[qi];
            if (c + 1 < p) gx += std::abs(rs.at(r0 + r, c0 + c + 1) - v);
            if (r + 1 < p) gy += std::abs(rs.at(r0 + r + 1, c0 + c) - v);
          }
        const double n = double(p) * p;
        const double mean = sum / n;
        const double var = std::max(0.0, sum2 / n - mean * mean);
        double stats[8] = {mean,
                           std::sqrt(var),
                           qcount[0] ? quad[0] / qcount[0] : 0.0,
                           qcount[1] ? quad[1] / qcount[1] : 0.0,
                           qcount[2] ? quad[2] / qcount[2] : 0.0,
                           qcount[3] ? quad[3] / qcount[3] : 0.0,
                           p > 1 ? gx / (double(p) * (p - 1)) : 0.0,
                           p > 1 ? gy / (double(p) * (p - 1)) : 0.0};
        float* tok = em.token(gr * g + gc);
        for (int c = 0; c < d; ++c) tok[c] = static_cast<float>(stats[c % 8]);
        // z-normalize across channels
        double tm = 0.0;
        for (int c = 0; c < d; ++c) tm += tok[c];
        tm /= d;
        double tv = 0.0;
        for (int c = 0; c < d; ++c) tv += (tok[c] - tm) * (tok[c] - tm);
        tv /= d;
        const double ts = std::sqrt(tv);
        if (ts > 1e-12) {
          for (int c = 0; c < d; ++c) tok[c] = static_cast<float>((tok[c] - tm) / ts);
        } else {
          for (int c = 0; c < d; ++c) tok[c] = static_cast<float>(tok[c] - tm);
        }
      }
    }
    return em;
  }

  // ToyViT: patch linear embed + positional embedding, then pre-norm blocks.
  std::vector<float> x(size_t(T) * d, 0.0f);
  {
    std::vector<float> patches(size_t(T) * p * p);
    for (int gr = 0; gr < g; ++gr)
      for (int gc = 0; gc < g; ++gc) {
        float* dst = patches.data() + size_t(gr * g + gc) * p * p;
        for (int r = 0; r < p; ++r)
          for (int c = 0; c < p; ++c) dst[r * p + c] = rs.at(gr * p + r, gc * p + c);
      }
    matmul_add(patches.data(), T, p * p, vit_->patch_embed.data(), d, x.data());
    for (size_t i = 0; i < x.size(); ++i) x[i] += vit_->pos_embed[i];
  }

  std::vector<float> ln(size_t(T) * d), q(size_t(T) * d), k(size_t(T) * d), v(size_t(T) * d);
  std::vector<float> attn_out(size_t(T) * d), proj(size_t(T) * d);
  std::vector<double> scores(size_t(T) * T);
  const int h = spec_.heads;
  const int dh = d / h;
  for (const auto& blk : vit_->blocks) {
    // x += Wo(MHA(LN(x)))
    layer_norm(x.data(), T, d, ln.data());
    std::fill(q.begin(), q.end(), 0.0f);
    std::fill(k.begin(), k.end(), 0.0f);
    std::fill(v.begin(), v.end(), 0.0f);
    matmul_add(ln.data(), T, d, blk.wq.data(), d, q.data());
    matmul_add(ln.data(), T, d, blk.wk.data(), d, k.data());
    matmul_add(ln.data(), T, d, blk.wv.data(), d, v.data());
    std::fill(attn_out.begin(), attn_out.end(), 0.0f);
    for (int hd = 0; hd < h; ++hd) {
      const int off = hd * dh;
      for (int r = 0; r < T; ++r)
        for (int c = 0; c < T; ++c) {
          double acc = 0.0;
          for (int i = 0; i < dh; ++i)
            acc += double(q[size_t(r) * d + off + i]) * k[size_t(c) * d + off + i];
          scores[size_t(r) * T + c] = acc / std::sqrt(double(dh));
        }
      softmax_rows(scores, T, T);
      for (int r = 0; r < T; ++r)
        for (int i = 0; i < dh; ++i) {
          double acc = 0.0;
          for (int c = 0; c < T; ++c)
            acc += scores[size_t(r) * T + c] * v[size_t(c) * d + off + i];
          attn_out[size_t(r) * d + off + i] = static_cast<float>(acc);
        }
    }
    std::fill(proj.begin(), proj.end(), 0.0f);
    matmul_add(attn_out.data(), T, d, blk.wo.data(), d, proj.data());
    for (size_t i = 0; i < x.size(); ++i) x[i] += proj[i];

    // x += W2(relu(W1(LN(x))))
    layer_norm(x.data(), T, d, ln.data());
    std::vector<float> hid(size_t(T) * 2 * d, 0.0f);
    matmul_add(ln.data(), T, d, blk.w1.data(), 2 * d, hid.data());
    for (float& hx : hid) hx = std::max(hx, 0.0f);
    std::fill(proj.begin(), proj.end(), 0.0f);
    matmul_add(hid.data(), T, 2 * d, blk.w2.data(), d, proj.data());
    for (size_t i = 0; i < x.size(); ++i) x[i] += proj[i];
  }

  em.tokens = std::move(x);
  return em;
}

}  // namespace fateseg
