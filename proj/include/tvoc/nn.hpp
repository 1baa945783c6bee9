#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace tvoc {

/// 64-byte aligned allocator. Eigen picks its vectorized peeling from the actual data
/// address, so buffers with a fixed base alignment keep float results independent of
/// where the allocator happened to place them.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense NCHW tensor (rank <= 4; unused trailing dims are 1).
template <typename T>
struct Tensor {
    int n = 0, c = 0, h = 1, w = 1;
    Buffer<T> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_ = 1, int w_ = 1)
        : n(n_), c(c_), h(h_), w(w_), data(std::size_t(n_) * c_ * h_ * w_, T(0)) {}

    std::size_t size() const { return data.size(); }
    std::size_t sample_size() const { return std::size_t(c) * h * w; }
    T* sample(int i) { return data.data() + std::size_t(i) * sample_size(); }
    const T* sample(int i) const { return data.data() + std::size_t(i) * sample_size(); }
    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

/// Conv stack: per level conv3x3("same") + ReLU + maxpool2x2, then dense to the latent.
/// The decoder mirrors it: dense + ReLU, then per level nearest 2x upsample + conv3x3,
/// ReLU on all but the final (linear) output conv.
struct Arch {
    int channels = 1;
    int input_size = 32;
    std::vector<int> feature_maps{50, 20, 10};
    int latent = 20;

    int bottleneck_side() const { return input_size >> feature_maps.size(); }
    int bottleneck_size() const { return feature_maps.back() * bottleneck_side() * bottleneck_side(); }
    bool operator==(const Arch&) const = default;
};

struct ParamBlock {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::size_t fan_in = 0;
};

/// Activations recorded by a forward pass; consumed by backward().
template <typename T>
struct Tape {
    bool built = false;
    Tensor<T> input;
    std::vector<Tensor<T>> enc_act;       // post-ReLU conv outputs per level
    std::vector<Tensor<T>> enc_pooled;    // pooled outputs per level
    std::vector<std::vector<std::uint32_t>> pool_argmax;
    Tensor<T> latent;
    Tensor<T> dec_hidden;                 // post-ReLU decoder dense output
    std::vector<Tensor<T>> dec_up;        // upsampled conv inputs, deepest first
    std::vector<Tensor<T>> dec_act;       // conv outputs, deepest first; back() is the reconstruction

    const Tensor<T>& output() const { return dec_act.back(); }
};

template <typename T>
class Autoencoder {
public:
    Autoencoder() = default;
    /// All parameters zero.
    explicit Autoencoder(Arch arch);
    /// Uniform He fan-in initialization of weights, zero biases.
    static Autoencoder initialized(Arch arch, std::uint64_t seed);

    const Arch& arch() const { return arch_; }
    std::span<T> params() { return params_; }
    std::span<const T> params() const { return params_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }
    const ParamBlock& block(const std::string& name) const;

    /// B x C x s x s -> B x latent. Samples are processed independently (and in parallel).
    Tensor<T> encode(const Tensor<T>& batch) const;
    Tensor<T> decode(const Tensor<T>& latent) const;
    Tensor<T> reconstruct(const Tensor<T>& batch) const;

    void forward(const Tensor<T>& batch, Tape<T>& tape) const;
    /// Gradients of a scalar loss given dL/d(output) and optionally dL/d(latent).
    /// grads is resized and overwritten; layout matches params().
    void backward(const Tape<T>& tape, const Tensor<T>& d_output, const Tensor<T>* d_latent,
                  Buffer<T>& grads) const;

    template <typename U>
    Autoencoder<U> cast() const {
        Autoencoder<U> out(arch_);
        auto dst = out.params();
        for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
        return out;
    }

private:
    void check_input(const Tensor<T>& batch) const;
    void encode_sample(const T* in, T* z, Buffer<T>& scratch_a, Buffer<T>& scratch_b) const;

    Arch arch_;
    std::vector<ParamBlock> blocks_;
    Buffer<T> params_;
};

/// Mean over all elements of (input - output)^2, accumulated in double.
/// If d_output is given it receives dL/d(output) = 2 (output - input) / numel.
template <typename T>
double mse_loss(const Tensor<T>& input, const Tensor<T>& output, Tensor<T>* d_output = nullptr);

template <typename T>
double reconstruction_loss(const Autoencoder<T>& model, const Tensor<T>& batch);

/// Momentum SGD: v <- mu v + g; p <- p - lr v.
template <typename T>
struct Sgd {
    double lr = 1e-3;
    double momentum = 0.9;
    Buffer<T> velocity;

    void step(std::span<T> params, std::span<const T> grads);
};

using Model = Autoencoder<float>;

/// Model file: magic "DCNW1", u32 version, architecture descriptor, u64 count,
/// f32 LE weights, u64 FNV-1a checksum of everything before it.
inline constexpr std::uint32_t kModelFormatVersion = 1;
void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_model(const Model& m);
Model decode_model(const std::vector<std::uint8_t>& bytes);

struct GradcheckEntry {
    std::string block;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
};

/// Compares backward() with central finite differences of the double-precision loss
/// recon + lambda * ||z - c||^2 over every parameter of a small network.
std::vector<GradcheckEntry> gradient_check(const Arch& arch, std::uint64_t seed, double eps = 1e-3,
                                           double lambda = 0.5, int batch = 2);

}  // namespace tvoc
