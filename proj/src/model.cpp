#include "hapfuse/model.hpp"

#include <cmath>

namespace hapfuse {

using ad::Tape;
using ad::Var;

ModelDims ModelDims::from(const RunConfig& cfg) {
  ModelDims d;
  d.D = cfg.model.embed_dim;
  d.heads = cfg.model.heads;
  d.M = cfg.pipeline.n_mels;
  d.T = cfg.pipeline.window_frames;
  d.N = cfg.pipeline.n_points;
  d.Ds = cfg.world.proprio_dim();
  d.Da = cfg.world.action_dim();
  d.n_obs = cfg.pipeline.n_obs;
  d.horizon = cfg.model.horizon;
  d.width = cfg.model.denoiser_width;
  d.blocks = cfg.model.denoiser_blocks;
  d.k_embed = cfg.model.k_embed_dim;
  return d;
}

NormalizedObs normalize_obs(const Observation& obs, const NormStats& norm) {
  NormalizedObs out;
  for (const auto& w : obs.audio) out.audio.push_back(norm.norm_mel(w));
  out.points = obs.points;
  for (const auto& p : obs.proprio) out.proprio.push_back(norm.norm_proprio(p));
  return out;
}

// ---------------------------------------------------------------------------
// registration

namespace {

using Init = ParamStore::Init;

void add_linear(ParamStore& ps, const std::string& prefix, int in, int out,
                std::uint64_t seed, Init w_init = Init::glorot) {
  ps.add(prefix + ".w", in, out, w_init, seed);
  ps.add(prefix + ".b", 1, out, Init::zeros, seed);
}

void add_attention(ParamStore& ps, const std::string& prefix, int D,
                   std::uint64_t seed) {
  add_linear(ps, prefix + ".q", D, D, seed);
  add_linear(ps, prefix + ".k", D, D, seed);
  add_linear(ps, prefix + ".v", D, D, seed);
  add_linear(ps, prefix + ".o", D, D, seed);
}

void add_cross_block(ParamStore& ps, const std::string& prefix, int D,
                     std::uint64_t seed) {
  add_attention(ps, prefix, D, seed);
  ps.add(prefix + ".ln.g", 1, D, Init::ones, seed);
  ps.add(prefix + ".ln.b", 1, D, Init::zeros, seed);
}

// gate MLPs start as the identity gate (2*sigmoid(0) = 1)
void add_gate(ParamStore& ps, const std::string& prefix, int D, std::uint64_t seed) {
  add_linear(ps, prefix + ".l1", D, D, seed);
  add_linear(ps, prefix + ".l2", D, D, seed, Init::zeros);
}

Var ln_affine(GraphBuilder& g, const std::string& prefix, Var x) {
  Tape& t = g.tape();
  Var n = t.layernorm_rows(x, 1e-8);
  return t.add_rowvec(t.mul_rowvec(n, g.P(prefix + ".g")), g.P(prefix + ".b"));
}

Var mlp_linear(GraphBuilder& g, const std::string& prefix, Var x) {
  return ad::linear(g.tape(), x, g.P(prefix + ".w"), g.P(prefix + ".b"));
}

// token-wise bounded positive gate: 2 * sigmoid(MLP(x))
Var gate_mlp(GraphBuilder& g, const std::string& prefix, Var x) {
  Tape& t = g.tape();
  Var h = t.relu(mlp_linear(g, prefix + ".l1", x));
  return t.scale(t.sigmoid(mlp_linear(g, prefix + ".l2", h)), 2.0);
}

}  // namespace

void register_encoder_params(ParamStore& ps, const ModelDims& d, std::uint64_t seed) {
  const int C = d.conv_c();
  add_linear(ps, "enc.audio.time.c1", d.k_time1() * d.M, C, seed);
  add_linear(ps, "enc.audio.time.c2", d.k_time2() * C, C, seed);
  add_linear(ps, "enc.audio.freq.c1", d.k_freq1() * d.T, C, seed);
  add_linear(ps, "enc.audio.freq.c2", d.k_freq2() * C, C, seed);
  add_linear(ps, "enc.audio.proj", 2 * C, d.D, seed);

  add_linear(ps, "enc.point.l1", 3, d.D, seed);
  ps.add("enc.point.ln1.g", 1, d.D, Init::ones, seed);
  ps.add("enc.point.ln1.b", 1, d.D, Init::zeros, seed);
  add_linear(ps, "enc.point.l2", d.D, d.D, seed);
  ps.add("enc.point.ln2.g", 1, d.D, Init::ones, seed);
  ps.add("enc.point.ln2.b", 1, d.D, Init::zeros, seed);
  add_linear(ps, "enc.point.proj", d.D, d.D, seed);

  add_linear(ps, "enc.prop.l1", d.Ds, d.D, seed);
  add_linear(ps, "enc.prop.l2", d.D, d.D, seed);
}

void register_fusion_params(ParamStore& ps, const ModelDims& d, FusionMode mode,
                            std::uint64_t seed) {
  const int D = d.D;
  switch (mode) {
    case FusionMode::hierarchical:
    case FusionMode::bbfm_only:
      add_attention(ps, "bbfm.attn_p", D, seed);
      add_attention(ps, "bbfm.attn_s", D, seed);
      add_gate(ps, "bbfm.a2p", D, seed);
      add_gate(ps, "bbfm.a2s", D, seed);
      add_linear(ps, "bbfm.p2s.l1", D, D, seed);
      // zero init keeps FiLM at the identity when training starts
      add_linear(ps, "bbfm.p2s.l2", D, 2 * D, seed, Init::zeros);
      break;
    default:
      break;
  }
  switch (mode) {
    case FusionMode::hierarchical:
    case FusionMode::imm_only:
      add_cross_block(ps, "imm.a", D, seed);
      add_cross_block(ps, "imm.p", D, seed);
      add_cross_block(ps, "imm.s", D, seed);
      add_linear(ps, "imm.zproj", 3 * D, 3 * D, seed, Init::identity_3x);
      break;
    default:
      break;
  }
  if (mode == FusionMode::bbfm_only)
    add_linear(ps, "fuse.bbfm_pool", 2 * D, 3 * D, seed);
  if (mode == FusionMode::concat_ps) add_linear(ps, "fuse.ps", 2 * D, 3 * D, seed);
  if (mode == FusionMode::concat_aps) add_linear(ps, "fuse.aps", 3 * D, 3 * D, seed);
  if (mode == FusionMode::transformer_maniwav) {
    for (int l = 0; l < 2; ++l) {
      const std::string p = "mw.layer" + std::to_string(l);
      add_attention(ps, p + ".attn", D, seed);
      ps.add(p + ".ln1.g", 1, D, Init::ones, seed);
      ps.add(p + ".ln1.b", 1, D, Init::zeros, seed);
      add_linear(ps, p + ".ffn.l1", D, 2 * D, seed);
      add_linear(ps, p + ".ffn.l2", 2 * D, D, seed);
      ps.add(p + ".ln2.g", 1, D, Init::ones, seed);
      ps.add(p + ".ln2.b", 1, D, Init::zeros, seed);
    }
    add_linear(ps, "mw.head.l1", 2 * D, 2 * D, seed);
    add_linear(ps, "mw.head.l2", 2 * D, 3 * D, seed);
  }
}

void register_denoiser_params(ParamStore& ps, const ModelDims& d, std::uint64_t seed) {
  const int in = d.chunk_elems() + d.k_embed;
  const int cond = d.fused_dim() + d.k_embed;
  add_linear(ps, "den.in", in, d.width, seed);
  for (int r = 0; r < d.blocks; ++r) {
    const std::string p = "den.blk" + std::to_string(r);
    add_linear(ps, p + ".film", cond, 2 * d.width, seed);
    add_linear(ps, p + ".l1", d.width, d.width, seed);
    add_linear(ps, p + ".l2", d.width, d.width, seed);
  }
  add_linear(ps, "den.out", d.width, d.chunk_elems(), seed);
}

void register_pretrain_params(ParamStore& ps, const ModelDims& d, std::uint64_t seed) {
  const int bottleneck = std::max(8, d.D / 4);
  const int q = 2 * d.D;
  add_linear(ps, "pre.bottleneck", 2 * d.D, bottleneck, seed);
  add_linear(ps, "pre.adec.l1", bottleneck, q, seed);
  add_linear(ps, "pre.adec.l2", q, d.T * d.M, seed);
  add_linear(ps, "pre.pdec.l1", bottleneck, q, seed);
  add_linear(ps, "pre.pdec.l2", q, d.Ds, seed);
}

ParamStore make_policy_params(const ModelDims& d, FusionMode mode, std::uint64_t seed) {
  ParamStore ps;
  register_encoder_params(ps, d, seed);
  register_fusion_params(ps, d, mode, seed);
  register_denoiser_params(ps, d, seed);
  return ps;
}

// ---------------------------------------------------------------------------
// encoders

Var encode_audio_frame(GraphBuilder& g, const ModelDims& d, Var window) {
  Tape& t = g.tape();
  // temporal branch: mel bins act as channels, convolution slides over time
  Var ht = t.relu(mlp_linear(g, "enc.audio.time.c1", t.unfold_rows(window, d.k_time1())));
  ht = t.relu(mlp_linear(g, "enc.audio.time.c2", t.unfold_rows(ht, d.k_time2())));
  Var ft = t.mean_rows(ht);
  // spectral branch: time frames act as channels, convolution slides over
  // frequency
  Var wf = t.transpose(window);
  Var hf = t.relu(mlp_linear(g, "enc.audio.freq.c1", t.unfold_rows(wf, d.k_freq1())));
  hf = t.relu(mlp_linear(g, "enc.audio.freq.c2", t.unfold_rows(hf, d.k_freq2())));
  Var ff = t.mean_rows(hf);
  return t.relu(mlp_linear(g, "enc.audio.proj", t.concat_cols(ft, ff)));
}

Var encode_points_frame(GraphBuilder& g, const ModelDims& d, Var points) {
  Tape& t = g.tape();
  Var h = t.relu(ln_affine(g, "enc.point.ln1", mlp_linear(g, "enc.point.l1", points)));
  h = t.relu(ln_affine(g, "enc.point.ln2", mlp_linear(g, "enc.point.l2", h)));
  return mlp_linear(g, "enc.point.proj", t.max_rows(h));
}

Var encode_proprio_frame(GraphBuilder& g, const ModelDims& d, Var proprio) {
  Tape& t = g.tape();
  Var h = t.relu(mlp_linear(g, "enc.prop.l1", proprio));
  return mlp_linear(g, "enc.prop.l2", h);
}

ModalTokens encode_tokens(GraphBuilder& g, const ModelDims& d, const NormalizedObs& obs) {
  Tape& t = g.tape();
  ModalTokens tok;
  for (int i = 0; i < int(obs.audio.size()); ++i) {
    Var a = encode_audio_frame(g, d, t.constant(obs.audio[i]));
    Var p = encode_points_frame(g, d, t.constant(obs.points[i]));
    Var s = encode_proprio_frame(g, d, t.constant(obs.proprio[i].transpose()));
    tok.audio = i == 0 ? a : t.concat_rows(tok.audio, a);
    tok.points = i == 0 ? p : t.concat_rows(tok.points, p);
    tok.proprio = i == 0 ? s : t.concat_rows(tok.proprio, s);
  }
  return tok;
}

// ---------------------------------------------------------------------------
// fusion

Var attention(GraphBuilder& g, const std::string& prefix, Var q_tokens,
              Var kv_tokens, int heads) {
  Tape& t = g.tape();
  Var q = mlp_linear(g, prefix + ".q", q_tokens);
  Var k = mlp_linear(g, prefix + ".k", kv_tokens);
  Var v = mlp_linear(g, prefix + ".v", kv_tokens);
  const int D = int(t.value(q).cols());
  const int dh = D / heads;
  Var ctx;
  for (int h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : t.slice_cols(q, h * dh, dh);
    Var kh = heads == 1 ? k : t.slice_cols(k, h * dh, dh);
    Var vh = heads == 1 ? v : t.slice_cols(v, h * dh, dh);
    Var scores = t.scale(t.matmul(qh, kh, false, true), 1.0 / std::sqrt(double(dh)));
    Var attn = t.softmax_rows(scores);
    Var oh = t.matmul(attn, vh);
    ctx = h == 0 ? oh : t.concat_cols(ctx, oh);
  }
  return mlp_linear(g, prefix + ".o", ctx);
}

Var self_attention(GraphBuilder& g, const std::string& prefix, Var tokens, int heads) {
  return attention(g, prefix, tokens, tokens, heads);
}

Var cross_attend_block(GraphBuilder& g, const std::string& prefix, Var q_tokens,
                       Var kv_tokens, int heads) {
  Tape& t = g.tape();
  Var z = attention(g, prefix, q_tokens, kv_tokens, heads);
  return ln_affine(g, prefix + ".ln", t.add(z, q_tokens));
}

BbfmOut bbfm(GraphBuilder& g, const ModelDims& d, Var x_a, Var x_p, Var x_s) {
  Tape& t = g.tape();
  BbfmOut out;
  out.h_p = t.hadamard(self_attention(g, "bbfm.attn_p", x_p, d.heads),
                       gate_mlp(g, "bbfm.a2p", x_a));
  out.h_s = t.hadamard(self_attention(g, "bbfm.attn_s", x_s, d.heads),
                       gate_mlp(g, "bbfm.a2s", x_a));
  Var hidden = t.relu(mlp_linear(g, "bbfm.p2s.l1", out.h_p));
  Var gb = mlp_linear(g, "bbfm.p2s.l2", hidden);
  out.gamma = t.slice_cols(gb, 0, d.D);
  out.beta = t.slice_cols(gb, d.D, d.D);
  // (1 + gamma) * h_s + beta
  out.h_s_hat = t.add(t.add(out.h_s, t.hadamard(out.h_s, out.gamma)), out.beta);
  return out;
}

Var imm(GraphBuilder& g, const ModelDims& d, Var x_a_highway, Var h_p, Var h_s_hat) {
  Tape& t = g.tape();
  Var z_s = cross_attend_block(g, "imm.s", h_s_hat,
                               t.concat_rows(x_a_highway, h_p), d.heads);
  Var z_a = cross_attend_block(g, "imm.a", x_a_highway,
                               t.concat_rows(h_p, h_s_hat), d.heads);
  Var z_p = cross_attend_block(g, "imm.p", h_p,
                               t.concat_rows(x_a_highway, h_s_hat), d.heads);
  Var pooled = t.concat_cols(t.concat_cols(t.mean_rows(z_a), t.mean_rows(z_p)),
                             t.mean_rows(z_s));
  return mlp_linear(g, "imm.zproj", pooled);
}

Var fuse_tokens(GraphBuilder& g, const ModelDims& d, FusionMode mode,
                const ModalTokens& tok) {
  Tape& t = g.tape();
  switch (mode) {
    case FusionMode::hierarchical: {
      BbfmOut b = bbfm(g, d, tok.audio, tok.points, tok.proprio);
      return imm(g, d, tok.audio, b.h_p, b.h_s_hat);
    }
    case FusionMode::bbfm_only: {
      BbfmOut b = bbfm(g, d, tok.audio, tok.points, tok.proprio);
      Var pooled = t.concat_cols(t.mean_rows(b.h_p), t.mean_rows(b.h_s_hat));
      return mlp_linear(g, "fuse.bbfm_pool", pooled);
    }
    case FusionMode::imm_only:
      return imm(g, d, tok.audio, tok.points, tok.proprio);
    case FusionMode::concat_ps: {
      Var pooled = t.concat_cols(t.mean_rows(tok.points), t.mean_rows(tok.proprio));
      return mlp_linear(g, "fuse.ps", pooled);
    }
    case FusionMode::concat_aps: {
      Var pooled = t.concat_cols(
          t.concat_cols(t.mean_rows(tok.audio), t.mean_rows(tok.points)),
          t.mean_rows(tok.proprio));
      return mlp_linear(g, "fuse.aps", pooled);
    }
    case FusionMode::transformer_maniwav: {
      Var h = t.concat_rows(tok.audio, tok.points);
      for (int l = 0; l < 2; ++l) {
        const std::string p = "mw.layer" + std::to_string(l);
        Var a = self_attention(g, p + ".attn", h, d.heads);
        h = ln_affine(g, p + ".ln1", t.add(h, a));
        Var f = t.relu(mlp_linear(g, p + ".ffn.l1", h));
        f = mlp_linear(g, p + ".ffn.l2", f);
        h = ln_affine(g, p + ".ln2", t.add(h, f));
      }
      Var pooled = t.concat_cols(t.mean_rows(h), t.mean_rows(tok.proprio));
      Var head = t.relu(mlp_linear(g, "mw.head.l1", pooled));
      return mlp_linear(g, "mw.head.l2", head);
    }
  }
  throw std::logic_error("fuse_tokens: unknown mode");
}

Var fuse_obs(GraphBuilder& g, const ModelDims& d, FusionMode mode,
             const NormalizedObs& obs) {
  return fuse_tokens(g, d, mode, encode_tokens(g, d, obs));
}

Mat fuse_latent(const ParamStore& params, const ModelDims& d, FusionMode mode,
                const NormalizedObs& obs) {
  ad::Tape tape;
  GraphBuilder g(tape, params);
  return tape.value(fuse_obs(g, d, mode, obs));
}

// ---------------------------------------------------------------------------
// denoiser

Mat noise_level_embedding(int k, int dim) {
  Mat e(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double w = std::exp(-std::log(10000.0) * double(i) / half);
    e(0, 2 * i) = std::sin(k * w);
    e(0, 2 * i + 1) = std::cos(k * w);
  }
  return e;
}

Var denoiser_forward(GraphBuilder& g, const ModelDims& d, Var a_flat, int k, Var z) {
  Tape& t = g.tape();
  Var k_emb = t.constant(noise_level_embedding(k, d.k_embed));
  Var h = t.relu(mlp_linear(g, "den.in", t.concat_cols(a_flat, k_emb)));
  Var cond = t.concat_cols(z, k_emb);
  for (int r = 0; r < d.blocks; ++r) {
    const std::string p = "den.blk" + std::to_string(r);
    Var gb = mlp_linear(g, p + ".film", cond);
    Var gamma = t.slice_cols(gb, 0, d.width);
    Var beta = t.slice_cols(gb, d.width, d.width);
    Var hf = t.add(t.add(h, t.hadamard(h, gamma)), beta);
    Var f = t.relu(mlp_linear(g, p + ".l1", hf));
    f = mlp_linear(g, p + ".l2", f);
    h = t.add(h, f);
  }
  return mlp_linear(g, "den.out", h);
}

// ---------------------------------------------------------------------------
// pretraining

PretrainLoss pretrain_loss(GraphBuilder& g, const ModelDims& d, Var window,
                           const Mat& window_target, Var proprio,
                           const Mat& proprio_target, double lambda_p) {
  Tape& t = g.tape();
  Var xa = encode_audio_frame(g, d, window);
  Var xs = encode_proprio_frame(g, d, proprio);
  Var latent = t.relu(mlp_linear(g, "pre.bottleneck", t.concat_cols(xa, xs)));

  Var arec = mlp_linear(g, "pre.adec.l2",
                        t.relu(mlp_linear(g, "pre.adec.l1", latent)));
  Var prec = mlp_linear(g, "pre.pdec.l2",
                        t.relu(mlp_linear(g, "pre.pdec.l1", latent)));

  Mat win_flat(1, window_target.size());
  for (int i = 0; i < window_target.rows(); ++i)
    for (int j = 0; j < window_target.cols(); ++j)
      win_flat(0, i * window_target.cols() + j) = window_target(i, j);

  PretrainLoss out;
  out.audio_recon = t.mse(arec, win_flat);
  out.proprio_recon = t.mse(prec, proprio_target);
  out.total = t.add(out.audio_recon, t.scale(out.proprio_recon, lambda_p));
  return out;
}

}  // namespace hapfuse
