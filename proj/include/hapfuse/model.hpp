#pragma once

#include <string>
#include <vector>

#include "hapfuse/autodiff.hpp"
#include "hapfuse/config.hpp"
#include "hapfuse/params.hpp"
#include "hapfuse/pipeline.hpp"

namespace hapfuse {

/// Shapes shared by the encoders, fusion stack, and denoiser. Audio conv
/// kernels shrink automatically for very short windows so tiny test
/// configurations stay valid.
struct ModelDims {
  int D = 128;      // token embedding dim
  int heads = 1;
  int M = 64;       // mel bins
  int T = 32;       // audio window frames
  int N = 512;      // points per cloud
  int Ds = 7;       // proprioception dim
  int Da = 7;       // action dim
  int n_obs = 2;    // stacked frames / tokens per modality
  int horizon = 8;  // actions per chunk
  int width = 256;  // denoiser hidden width
  int blocks = 2;   // denoiser residual blocks
  int k_embed = 64; // sinusoidal noise-level embedding dim

  int conv_c() const { return std::max(4, D / 2); }
  int k_time1() const { return std::min(5, T); }
  int k_time2() const { return std::min(3, T - k_time1() + 1); }
  int k_freq1() const { return std::min(5, M); }
  int k_freq2() const { return std::min(3, M - k_freq1() + 1); }
  int fused_dim() const { return 3 * D; }
  int chunk_elems() const { return horizon * Da; }

  static ModelDims from(const RunConfig& cfg);
};

/// One training/inference sample after normalization.
struct NormalizedObs {
  std::vector<Mat> audio;   // n_obs windows, T x M, z-scored
  std::vector<Mat> points;  // n_obs clouds, N x 3
  std::vector<Vec> proprio; // n_obs vectors, z-scored
};

NormalizedObs normalize_obs(const Observation& obs, const NormStats& norm);

// ---- parameter registration ----

void register_encoder_params(ParamStore& ps, const ModelDims& d, std::uint64_t seed);
void register_fusion_params(ParamStore& ps, const ModelDims& d, FusionMode mode,
                            std::uint64_t seed);
void register_denoiser_params(ParamStore& ps, const ModelDims& d, std::uint64_t seed);
void register_pretrain_params(ParamStore& ps, const ModelDims& d, std::uint64_t seed);

/// Full policy parameter set for one fusion mode.
ParamStore make_policy_params(const ModelDims& d, FusionMode mode, std::uint64_t seed);

// ---- encoder forward passes (one token per stacked frame) ----

ad::Var encode_audio_frame(GraphBuilder& g, const ModelDims& d, ad::Var window);
ad::Var encode_points_frame(GraphBuilder& g, const ModelDims& d, ad::Var points);
ad::Var encode_proprio_frame(GraphBuilder& g, const ModelDims& d, ad::Var proprio);

struct ModalTokens {
  ad::Var audio;   // n_obs x D
  ad::Var points;  // n_obs x D
  ad::Var proprio; // n_obs x D
};

ModalTokens encode_tokens(GraphBuilder& g, const ModelDims& d, const NormalizedObs& obs);

// ---- fusion ----

/// Scaled dot-product attention with learned projections; no residual.
ad::Var attention(GraphBuilder& g, const std::string& prefix, ad::Var q_tokens,
                  ad::Var kv_tokens, int heads);
ad::Var self_attention(GraphBuilder& g, const std::string& prefix, ad::Var tokens,
                       int heads);

/// Attention followed by residual connection and layer normalization.
ad::Var cross_attend_block(GraphBuilder& g, const std::string& prefix,
                           ad::Var q_tokens, ad::Var kv_tokens, int heads);

struct BbfmOut {
  ad::Var h_p;      // audio-gated, self-attended point tokens
  ad::Var h_s;      // audio-gated, self-attended proprio tokens
  ad::Var h_s_hat;  // FiLM-modulated proprio tokens
  ad::Var gamma;
  ad::Var beta;
};

/// Binary-branched fusion: audio gates the other two streams token-wise,
/// then the gated point stream emits FiLM parameters for the proprio stream.
BbfmOut bbfm(GraphBuilder& g, const ModelDims& d, ad::Var x_a, ad::Var x_p, ad::Var x_s);

/// Interaction stage: three parallel cross-attention streams, each modality
/// querying the other two (the audio query rides the encoder-output highway),
/// mean-pooled and concatenated as [A<-PS || P<-AS || S<-AP], then projected.
ad::Var imm(GraphBuilder& g, const ModelDims& d, ad::Var x_a_highway, ad::Var h_p,
            ad::Var h_s_hat);

/// Fused latent z (1 x 3D) for any fusion mode.
ad::Var fuse_tokens(GraphBuilder& g, const ModelDims& d, FusionMode mode,
                    const ModalTokens& tokens);
ad::Var fuse_obs(GraphBuilder& g, const ModelDims& d, FusionMode mode,
                 const NormalizedObs& obs);

/// Inference-path helper: evaluates the fused latent as a plain matrix.
Mat fuse_latent(const ParamStore& params, const ModelDims& d, FusionMode mode,
                const NormalizedObs& obs);

// ---- denoiser ----

Mat noise_level_embedding(int k, int dim);

/// FiLM-conditioned residual MLP predicting noise (or the clean chunk,
/// depending on the training objective) from the flattened noisy chunk, the
/// noise-level embedding, and z.
ad::Var denoiser_forward(GraphBuilder& g, const ModelDims& d, ad::Var a_flat,
                         int k, ad::Var z);

// ---- audio--proprio pretraining heads ----

struct PretrainLoss {
  ad::Var total;
  ad::Var audio_recon;
  ad::Var proprio_recon;
};

PretrainLoss pretrain_loss(GraphBuilder& g, const ModelDims& d, ad::Var window,
                           const Mat& window_target, ad::Var proprio,
                           const Mat& proprio_target, double lambda_p);

}  // namespace hapfuse
