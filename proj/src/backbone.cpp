#include "maskinv/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace maskinv {

namespace {

constexpr int kKernel = 3;
constexpr int kStride = 2;
constexpr int kPad = 1;

int conv_out(int n) { return (n + 2 * kPad - kKernel) / kStride + 1; }

// x: C x (H*W*B), column b*H*W + y*W + x. Returns (C*9) x (Ho*Wo*B).
Matrix im2col(const Matrix& x, int channels, int h, int w, int oh, int ow, std::size_t batch) {
    const Eigen::Index in_hw = static_cast<Eigen::Index>(h) * w;
    const Eigen::Index out_hw = static_cast<Eigen::Index>(oh) * ow;
    Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(channels) * kKernel * kKernel,
                               out_hw * static_cast<Eigen::Index>(batch));
    for (std::size_t b = 0; b < batch; ++b) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const Eigen::Index col = static_cast<Eigen::Index>(b) * out_hw + oy * ow + ox;
                for (int ky = 0; ky < kKernel; ++ky) {
                    const int iy = oy * kStride - kPad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < kKernel; ++kx) {
                        const int ix = ox * kStride - kPad + kx;
                        if (ix < 0 || ix >= w) continue;
                        const Eigen::Index src = static_cast<Eigen::Index>(b) * in_hw + iy * w + ix;
                        for (int c = 0; c < channels; ++c) {
                            cols((c * kKernel + ky) * kKernel + kx, col) = x(c, src);
                        }
                    }
                }
            }
        }
    }
    return cols;
}

Matrix col2im(const Matrix& cols, int channels, int h, int w, int oh, int ow, std::size_t batch) {
    const Eigen::Index in_hw = static_cast<Eigen::Index>(h) * w;
    const Eigen::Index out_hw = static_cast<Eigen::Index>(oh) * ow;
    Matrix x = Matrix::Zero(channels, in_hw * static_cast<Eigen::Index>(batch));
    for (std::size_t b = 0; b < batch; ++b) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const Eigen::Index col = static_cast<Eigen::Index>(b) * out_hw + oy * ow + ox;
                for (int ky = 0; ky < kKernel; ++ky) {
                    const int iy = oy * kStride - kPad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < kKernel; ++kx) {
                        const int ix = ox * kStride - kPad + kx;
                        if (ix < 0 || ix >= w) continue;
                        const Eigen::Index dst = static_cast<Eigen::Index>(b) * in_hw + iy * w + ix;
                        for (int c = 0; c < channels; ++c) {
                            x(c, dst) += cols((c * kKernel + ky) * kKernel + kx, col);
                        }
                    }
                }
            }
        }
    }
    return x;
}

// Splits [0, n) into at most `workers` contiguous ranges.
std::vector<std::pair<std::size_t, std::size_t>> split(std::size_t n, int workers) {
    const std::size_t k = std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(workers)));
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t count = n / k + (i < n % k ? 1 : 0);
        out.emplace_back(begin, count);
        begin += count;
    }
    return out;
}

template <typename Fn>
void run_parallel(std::size_t tasks, Fn&& fn) {
    if (tasks <= 1) {
        for (std::size_t i = 0; i < tasks; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(tasks);
    for (std::size_t i = 0; i < tasks; ++i) threads.emplace_back([&fn, i] { fn(i); });
    for (auto& t : threads) t.join();
}

}  // namespace

Backbone::Backbone(const BackboneConfig& config, int embedding_dim, std::int64_t seed)
    : config_(config), embedding_dim_(embedding_dim) {
    if (embedding_dim <= 0) throw ValidationError("embedding_dim must be positive");
    if (config.input_pool < 1 || config.channels.empty()) throw ValidationError("invalid backbone shape");
    pooled_size_ = kFaceSize / config.input_pool;
    auto rng = make_rng(seed, "backbone");
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto init = [&](Eigen::Index rows, Eigen::Index cols, double stddev) {
        Matrix m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j) {
            for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = stddev * gauss(rng);
        }
        return m;
    };

    int channels = kFaceChannels;
    int size = pooled_size_;
    for (std::size_t l = 0; l < config.channels.size(); ++l) {
        const int out = config.channels[l];
        const int next = conv_out(size);
        stages_.push_back({channels, out, size, size, next, next});
        const int fan_in = channels * kKernel * kKernel;
        params_.push_back({"conv" + std::to_string(l) + ".weight", init(out, fan_in, std::sqrt(2.0 / fan_in))});
        params_.push_back({"conv" + std::to_string(l) + ".bias", Matrix::Zero(out, 1)});
        channels = out;
        size = next;
    }
    const int features = feature_inputs();
    params_.push_back({"embedding.weight", init(embedding_dim, features, std::sqrt(1.0 / features))});
    params_.push_back({"embedding.bias", Matrix::Zero(embedding_dim, 1)});
}

int Backbone::feature_inputs() const {
    const Stage& last = stages_.back();
    return last.out_channels * last.out_h * last.out_w;
}

void Backbone::forward_chunk(std::span<const FaceImage* const> batch, ForwardCache::Chunk& chunk, Matrix& out) const {
    const std::size_t n = batch.size();
    const int pool = config_.input_pool;
    const Eigen::Index hw = static_cast<Eigen::Index>(pooled_size_) * pooled_size_;
    Matrix x = Matrix::Zero(kFaceChannels, hw * static_cast<Eigen::Index>(n));
    const double inv_area = 1.0 / (pool * pool);
    for (std::size_t b = 0; b < n; ++b) {
        const FaceImage& img = *batch[b];
        for (int py = 0; py < pooled_size_; ++py) {
            for (int px = 0; px < pooled_size_; ++px) {
                const Eigen::Index col = static_cast<Eigen::Index>(b) * hw + py * pooled_size_ + px;
                for (int c = 0; c < kFaceChannels; ++c) {
                    double sum = 0.0;
                    for (int dy = 0; dy < pool; ++dy) {
                        for (int dx = 0; dx < pool; ++dx) sum += img.at(py * pool + dy, px * pool + dx, c);
                    }
                    x(c, col) = sum * inv_area;
                }
            }
        }
    }

    chunk.cols.clear();
    chunk.pre.clear();
    for (std::size_t l = 0; l < stages_.size(); ++l) {
        const Stage& s = stages_[l];
        Matrix cols = im2col(x, s.in_channels, s.in_h, s.in_w, s.out_h, s.out_w, n);
        Matrix z = params_[2 * l].value * cols;
        z.colwise() += params_[2 * l + 1].value.col(0);
        x = z.cwiseMax(0.0);
        chunk.cols.push_back(std::move(cols));
        chunk.pre.push_back(std::move(z));
    }
    // Each image's C x H*W block is contiguous, so the activations reinterpret
    // directly as an F x n matrix.
    const Eigen::Index features = feature_inputs();
    chunk.flat = Eigen::Map<const Matrix>(x.data(), features, static_cast<Eigen::Index>(n));
    const std::size_t fc = 2 * stages_.size();
    Matrix f = params_[fc].value * chunk.flat;
    f.colwise() += params_[fc + 1].value.col(0);
    out = f.transpose();
}

Matrix Backbone::forward(std::span<const FaceImage* const> batch, ForwardCache* cache, int workers) const {
    if (batch.empty()) throw ContractError("empty batch");
    const auto ranges = split(batch.size(), workers);
    std::vector<ForwardCache::Chunk> chunks(ranges.size());
    std::vector<Matrix> outs(ranges.size());
    run_parallel(ranges.size(), [&](std::size_t i) {
        chunks[i].begin = ranges[i].first;
        chunks[i].count = ranges[i].second;
        forward_chunk(batch.subspan(ranges[i].first, ranges[i].second), chunks[i], outs[i]);
    });
    Matrix features(static_cast<Eigen::Index>(batch.size()), embedding_dim_);
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        features.middleRows(static_cast<Eigen::Index>(ranges[i].first), static_cast<Eigen::Index>(ranges[i].second)) =
            outs[i];
    }
    if (cache) cache->chunks = std::move(chunks);
    return features;
}

void Backbone::backward_chunk(const ForwardCache::Chunk& chunk, const Matrix& grad, std::vector<Matrix>& grads) const {
    const std::size_t n = chunk.count;
    const std::size_t fc = 2 * stages_.size();
    const Matrix df = grad.transpose();  // D x n
    grads[fc] = df * chunk.flat.transpose();
    grads[fc + 1] = df.rowwise().sum();
    Matrix dflat = params_[fc].value.transpose() * df;  // F x n

    const Stage& last = stages_.back();
    Matrix da = Eigen::Map<const Matrix>(dflat.data(), last.out_channels,
                                         static_cast<Eigen::Index>(last.out_h) * last.out_w * static_cast<Eigen::Index>(n));
    for (std::size_t l = stages_.size(); l-- > 0;) {
        const Stage& s = stages_[l];
        const Matrix dz = (chunk.pre[l].array() > 0.0).select(da, 0.0);
        grads[2 * l] = dz * chunk.cols[l].transpose();
        grads[2 * l + 1] = dz.rowwise().sum();
        if (l == 0) break;
        const Matrix dcols = params_[2 * l].value.transpose() * dz;
        da = col2im(dcols, s.in_channels, s.in_h, s.in_w, s.out_h, s.out_w, n);
    }
}

std::vector<Matrix> Backbone::backward(const ForwardCache& cache, const Matrix& grad_features, int workers) const {
    (void)workers;  // chunking was fixed by forward()
    if (cache.chunks.empty()) throw ContractError("backward() needs a cache filled by forward()");
    std::vector<std::vector<Matrix>> partial(cache.chunks.size(), std::vector<Matrix>(params_.size()));
    run_parallel(cache.chunks.size(), [&](std::size_t i) {
        const auto& chunk = cache.chunks[i];
        backward_chunk(chunk,
                       grad_features.middleRows(static_cast<Eigen::Index>(chunk.begin),
                                                static_cast<Eigen::Index>(chunk.count)),
                       partial[i]);
    });
    std::vector<Matrix> grads = std::move(partial[0]);
    for (std::size_t i = 1; i < partial.size(); ++i) {
        for (std::size_t p = 0; p < grads.size(); ++p) grads[p] += partial[i][p];
    }
    return grads;
}

std::uint64_t Backbone::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params_) {
        h = fnv1a(p.name, h);
        h = fnv1a(std::as_bytes(std::span<const double>(p.value.data(), static_cast<std::size_t>(p.value.size()))), h);
    }
    return h;
}

Matrix embed(const Backbone& model, std::span<const FaceImage* const> batch, int workers) {
    return normalize_rows(model.forward(batch, nullptr, workers));
}

}  // namespace maskinv
