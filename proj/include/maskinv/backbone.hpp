#pragma once

#include <span>
#include <string>
#include <vector>

#include "maskinv/core.hpp"
#include "maskinv/losses.hpp"

namespace maskinv {

struct NamedParam {
    std::string name;
    Matrix value;
};

/// Activations kept from a forward pass for the matching backward pass.
struct ForwardCache {
    struct Chunk {
        std::size_t begin = 0;
        std::size_t count = 0;
        std::vector<Matrix> cols;  // im2col input of each conv stage
        std::vector<Matrix> pre;   // pre-activation of each conv stage
        Matrix flat;               // F x count input of the embedding layer
    };
    std::vector<Chunk> chunks;
};

/// Small convolutional embedding network: a fixed average pool on the
/// 112x112 input followed by 3x3 stride-2 conv + ReLU stages and a linear
/// layer to D features. Parameters are plain matrices so the optimizer and
/// the checkpoint code can treat them uniformly.
class Backbone {
public:
    Backbone() = default;
    Backbone(const BackboneConfig& config, int embedding_dim, std::int64_t seed);

    const BackboneConfig& config() const { return config_; }
    int embedding_dim() const { return embedding_dim_; }
    int feature_inputs() const;

    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& params() const { return params_; }

    /// Pre-normalization features, one row per image (N x D). Pass a cache to
    /// enable backward().
    Matrix forward(std::span<const FaceImage* const> batch, ForwardCache* cache = nullptr, int workers = 1) const;

    /// Gradients of every parameter, in params() order, given dLoss/dfeatures.
    std::vector<Matrix> backward(const ForwardCache& cache, const Matrix& grad_features, int workers = 1) const;

    /// FNV-1a over all parameter bytes.
    std::uint64_t checksum() const;

private:
    struct Stage {
        int in_channels, out_channels, in_h, in_w, out_h, out_w;
    };

    void forward_chunk(std::span<const FaceImage* const> batch, ForwardCache::Chunk& chunk, Matrix& out) const;
    void backward_chunk(const ForwardCache::Chunk& chunk, const Matrix& grad, std::vector<Matrix>& grads) const;

    BackboneConfig config_;
    int embedding_dim_ = 0;
    int pooled_size_ = 0;
    std::vector<Stage> stages_;
    std::vector<NamedParam> params_;
};

/// L2-normalized embeddings (N x D) of a batch, computed in inference mode.
Matrix embed(const Backbone& model, std::span<const FaceImage* const> batch, int workers = 1);

}  // namespace maskinv
