#include "tvoc/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "tvoc/bytes.hpp"
#include "tvoc/error.hpp"
#include "tvoc/parallel.hpp"
#include "tvoc/rng.hpp"
#include "tvoc/volume.hpp"

namespace tvoc {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// 3x3 "same" convolution, one sample. cols is (cin*9) x (h*w); row (c, ky, kx)
// holds the input shifted by (ky-1, kx-1) with zeros outside the image.
template <typename T>
void im2col(const T* in, int cin, int h, int w, T* cols) {
    const int hw = h * w;
    for (int c = 0; c < cin; ++c) {
        const T* src = in + std::size_t(c) * hw;
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                T* row = cols + std::size_t(c * 9 + ky * 3 + kx) * hw;
                const int x_lo = kx == 0 ? 1 : 0;
                const int x_hi = kx == 2 ? w - 1 : w;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    T* dst = row + y * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const T* srow = src + sy * w + (kx - 1);
                    if (x_lo) dst[0] = T(0);
                    if (x_hi < w) dst[w - 1] = T(0);
                    std::copy(srow + x_lo, srow + x_hi, dst + x_lo);
                }
            }
    }
}

template <typename T>
void col2im_add(const T* cols, int cin, int h, int w, T* din) {
    const int hw = h * w;
    for (int c = 0; c < cin; ++c) {
        T* dst = din + std::size_t(c) * hw;
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const T* row = cols + std::size_t(c * 9 + ky * 3 + kx) * hw;
                const int x_lo = kx == 0 ? 1 : 0;
                const int x_hi = kx == 2 ? w - 1 : w;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    T* drow = dst + sy * w + (kx - 1);
                    const T* srow = row + y * w;
                    for (int x = x_lo; x < x_hi; ++x) drow[x] += srow[x];
                }
            }
    }
}

template <typename T>
void conv_forward(const T* in, int cin, int h, int w, const T* weight, const T* bias, int cout, T* out,
                  Buffer<T>& cols) {
    const int hw = h * w;
    cols.resize(std::size_t(cin) * 9 * hw);
    im2col(in, cin, h, w, cols.data());
    CMapMat<T> wm(weight, cout, cin * 9);
    CMapMat<T> cm(cols.data(), cin * 9, hw);
    MapMat<T> om(out, cout, hw);
    om.noalias() = wm * cm;
    for (int o = 0; o < cout; ++o) om.row(o).array() += bias[o];
}

template <typename T>
void conv_backward(const T* in, int cin, int h, int w, const T* weight, int cout, const T* dout, T* dweight,
                   T* dbias, T* din, Buffer<T>& cols, Buffer<T>& dcols) {
    const int hw = h * w;
    cols.resize(std::size_t(cin) * 9 * hw);
    im2col(in, cin, h, w, cols.data());
    CMapMat<T> dom(dout, cout, hw);
    CMapMat<T> cm(cols.data(), cin * 9, hw);
    MapMat<T> dwm(dweight, cout, cin * 9);
    dwm.noalias() += dom * cm.transpose();
    for (int o = 0; o < cout; ++o) dbias[o] += dom.row(o).sum();
    if (din) {
        // dL/din is the "same" convolution of dout with the kernel flipped 180 degrees
        // and its in/out channels swapped.
        Buffer<T> wt(std::size_t(cin) * cout * 9);
        for (int o = 0; o < cout; ++o)
            for (int c = 0; c < cin; ++c)
                for (int k = 0; k < 9; ++k)
                    wt[std::size_t(c) * cout * 9 + o * 9 + (8 - k)] = weight[(std::size_t(o) * cin + c) * 9 + k];
        dcols.resize(std::size_t(cout) * 9 * hw);
        im2col(dout, cout, h, w, dcols.data());
        CMapMat<T> wtm(wt.data(), cin, cout * 9);
        CMapMat<T> dcm(dcols.data(), cout * 9, hw);
        MapMat<T> dim(din, cin, hw);
        dim.noalias() = wtm * dcm;
    }
}

template <typename T>
void relu_inplace(T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > T(0) ? x[i] : T(0);
}

// 2x2 max pooling; ties go to the first element in row-major order.
template <typename T>
void maxpool_forward(const T* in, int c, int h, int w, T* out, std::uint32_t* argmax) {
    const int oh = h / 2, ow = w / 2;
    for (int ch = 0; ch < c; ++ch) {
        const std::uint32_t base = std::uint32_t(ch * h * w);
        const T* src = in + base;
        T* o = out + std::size_t(ch) * oh * ow;
        std::uint32_t* am = argmax + std::size_t(ch) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            const T* r0 = src + (2 * y) * w;
            const T* r1 = r0 + w;
            for (int x = 0; x < ow; ++x) {
                int idx = (2 * y) * w + 2 * x;
                T bv = r0[2 * x];
                if (r0[2 * x + 1] > bv) { bv = r0[2 * x + 1]; idx = (2 * y) * w + 2 * x + 1; }
                if (r1[2 * x] > bv) { bv = r1[2 * x]; idx = (2 * y + 1) * w + 2 * x; }
                if (r1[2 * x + 1] > bv) { bv = r1[2 * x + 1]; idx = (2 * y + 1) * w + 2 * x + 1; }
                o[y * ow + x] = bv;
                am[y * ow + x] = base + std::uint32_t(idx);
            }
        }
    }
}

template <typename T>
void upsample_forward(const T* in, int c, int h, int w, T* out) {
    const int oh = 2 * h, ow = 2 * w;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                out[(std::size_t(ch) * oh + y) * ow + x] = in[(std::size_t(ch) * h + y / 2) * w + x / 2];
}

template <typename T>
void upsample_backward(const T* dout, int c, int h, int w, T* din) {
    const int ow = 2 * w;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const T* d = dout + (std::size_t(ch) * 2 * h + 2 * y) * ow + 2 * x;
                din[(std::size_t(ch) * h + y) * w + x] = d[0] + d[1] + d[ow] + d[ow + 1];
            }
}

std::string level_name(const char* prefix, std::size_t i, const char* suffix) {
    return std::string(prefix) + std::to_string(i) + suffix;
}

}  // namespace

template <typename T>
Autoencoder<T>::Autoencoder(Arch arch) : arch_(std::move(arch)) {
    const int levels = int(arch_.feature_maps.size());
    if (arch_.channels < 1 || levels < 1 || arch_.latent < 1 || arch_.bottleneck_side() < 1 ||
        (arch_.bottleneck_side() << levels) != arch_.input_size)
        fail(Errc::ShapeMismatch, "input size must be divisible by 2^levels");
    std::size_t offset = 0;
    auto add = [&](std::string name, std::size_t size, std::size_t fan_in) {
        blocks_.push_back({std::move(name), offset, size, fan_in});
        offset += size;
    };
    int in_c = arch_.channels;
    for (int i = 0; i < levels; ++i) {
        const int out_c = arch_.feature_maps[i];
        add(level_name("enc.conv", i, ".w"), std::size_t(out_c) * in_c * 9, std::size_t(in_c) * 9);
        add(level_name("enc.conv", i, ".b"), out_c, std::size_t(in_c) * 9);
        in_c = out_c;
    }
    const std::size_t flat = arch_.bottleneck_size();
    add("enc.dense.w", flat * arch_.latent, flat);
    add("enc.dense.b", arch_.latent, flat);
    add("dec.dense.w", flat * arch_.latent, arch_.latent);
    add("dec.dense.b", flat, arch_.latent);
    for (int j = levels - 1; j >= 0; --j) {
        const int cin = arch_.feature_maps[j];
        const int cout = j > 0 ? arch_.feature_maps[j - 1] : arch_.channels;
        add(level_name("dec.conv", j, ".w"), std::size_t(cout) * cin * 9, std::size_t(cin) * 9);
        add(level_name("dec.conv", j, ".b"), cout, std::size_t(cin) * 9);
    }
    params_.assign(offset, T(0));
}

template <typename T>
Autoencoder<T> Autoencoder<T>::initialized(Arch arch, std::uint64_t seed) {
    Autoencoder m(std::move(arch));
    Rng rng(seed, "model-init");
    for (const auto& b : m.blocks_) {
        if (b.name.ends_with(".b")) continue;
        // Layers followed by a ReLU get the He bound; the two linear layers (latent dense,
        // output conv) get the fan-in bound without the ReLU factor of 2.
        const bool linear = b.name == "enc.dense.w" || b.name == "dec.conv0.w";
        const double bound = std::sqrt((linear ? 3.0 : 6.0) / double(b.fan_in));
        for (std::size_t i = 0; i < b.size; ++i) m.params_[b.offset + i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    return m;
}

template <typename T>
const ParamBlock& Autoencoder<T>::block(const std::string& name) const {
    for (const auto& b : blocks_)
        if (b.name == name) return b;
    fail(Errc::InvalidArgument, "no parameter block " + name);
}

template <typename T>
void Autoencoder<T>::check_input(const Tensor<T>& batch) const {
    if (batch.n < 1 || batch.c != arch_.channels || batch.h != arch_.input_size || batch.w != arch_.input_size)
        fail(Errc::ShapeMismatch, "expected B x " + std::to_string(arch_.channels) + " x " +
                                      std::to_string(arch_.input_size) + " x " + std::to_string(arch_.input_size));
}

template <typename T>
void Autoencoder<T>::encode_sample(const T* in, T* z, Buffer<T>& a, Buffer<T>& b) const {
    Buffer<T> cols;
    std::vector<std::uint32_t> argmax;
    const int levels = int(arch_.feature_maps.size());
    int side = arch_.input_size;
    int in_c = arch_.channels;
    a.assign(in, in + std::size_t(in_c) * side * side);
    for (int i = 0; i < levels; ++i) {
        const int out_c = arch_.feature_maps[i];
        const auto& wb = blocks_[2 * i];
        const auto& bb = blocks_[2 * i + 1];
        b.resize(std::size_t(out_c) * side * side);
        conv_forward(a.data(), in_c, side, side, &params_[wb.offset], &params_[bb.offset], out_c, b.data(), cols);
        relu_inplace(b.data(), b.size());
        argmax.resize(b.size() / 4);
        a.resize(b.size() / 4);
        maxpool_forward(b.data(), out_c, side, side, a.data(), argmax.data());
        side /= 2;
        in_c = out_c;
    }
    const auto& dw = blocks_[2 * levels];
    const auto& db = blocks_[2 * levels + 1];
    const int flat = arch_.bottleneck_size();
    CMapMat<T> wm(&params_[dw.offset], arch_.latent, flat);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> x(a.data(), flat);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> zv(z, arch_.latent);
    zv.noalias() = wm * x;
    for (int o = 0; o < arch_.latent; ++o) z[o] += params_[db.offset + o];
}

template <typename T>
Tensor<T> Autoencoder<T>::encode(const Tensor<T>& batch) const {
    check_input(batch);
    Tensor<T> z(batch.n, arch_.latent);
    parallel_for(std::size_t(batch.n), [&](std::size_t i) {
        Buffer<T> a, b;
        encode_sample(batch.sample(int(i)), z.sample(int(i)), a, b);
    });
    return z;
}

template <typename T>
Tensor<T> Autoencoder<T>::decode(const Tensor<T>& latent) const {
    if (latent.c != arch_.latent || latent.h != 1 || latent.w != 1) fail(Errc::ShapeMismatch, "bad latent shape");
    Tensor<T> batch(latent.n, arch_.channels, arch_.input_size, arch_.input_size);
    const int levels = int(arch_.feature_maps.size());
    const int flat = arch_.bottleneck_size();
    const auto& dw = blocks_[2 * levels + 2];
    const auto& db = blocks_[2 * levels + 3];
    Buffer<T> cols;
    for (int n = 0; n < latent.n; ++n) {
        Buffer<T> cur(flat);
        CMapMat<T> wm(&params_[dw.offset], flat, arch_.latent);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> zv(latent.sample(n), arch_.latent);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> hv(cur.data(), flat);
        hv.noalias() = wm * zv;
        for (int o = 0; o < flat; ++o) cur[o] += params_[db.offset + o];
        relu_inplace(cur.data(), cur.size());
        int side = arch_.bottleneck_side();
        std::size_t bi = 2 * levels + 4;
        for (int j = levels - 1; j >= 0; --j) {
            const int cin = arch_.feature_maps[j];
            const int cout = j > 0 ? arch_.feature_maps[j - 1] : arch_.channels;
            Buffer<T> up(std::size_t(cin) * 4 * side * side);
            upsample_forward(cur.data(), cin, side, side, up.data());
            side *= 2;
            cur.assign(std::size_t(cout) * side * side, T(0));
            conv_forward(up.data(), cin, side, side, &params_[blocks_[bi].offset], &params_[blocks_[bi + 1].offset],
                         cout, cur.data(), cols);
            if (j > 0) relu_inplace(cur.data(), cur.size());
            bi += 2;
        }
        std::copy(cur.begin(), cur.end(), batch.sample(n));
    }
    return batch;
}

template <typename T>
Tensor<T> Autoencoder<T>::reconstruct(const Tensor<T>& batch) const {
    return decode(encode(batch));
}

template <typename T>
void Autoencoder<T>::forward(const Tensor<T>& batch, Tape<T>& tape) const {
    check_input(batch);
    const int levels = int(arch_.feature_maps.size());
    const int B = batch.n;
    Buffer<T> cols;
    tape.built = false;
    tape.input = batch;
    tape.enc_act.resize(levels);
    tape.enc_pooled.resize(levels);
    tape.pool_argmax.resize(levels);

    const Tensor<T>* cur = &tape.input;
    int side = arch_.input_size;
    int in_c = arch_.channels;
    for (int i = 0; i < levels; ++i) {
        const int out_c = arch_.feature_maps[i];
        const auto& wb = blocks_[2 * i];
        const auto& bb = blocks_[2 * i + 1];
        Tensor<T>& act = tape.enc_act[i];
        act = Tensor<T>(B, out_c, side, side);
        Tensor<T>& pooled = tape.enc_pooled[i];
        pooled = Tensor<T>(B, out_c, side / 2, side / 2);
        tape.pool_argmax[i].assign(pooled.size(), 0);
        for (int n = 0; n < B; ++n) {
            conv_forward(cur->sample(n), in_c, side, side, &params_[wb.offset], &params_[bb.offset], out_c,
                         act.sample(n), cols);
            relu_inplace(act.sample(n), act.sample_size());
            maxpool_forward(act.sample(n), out_c, side, side, pooled.sample(n),
                            tape.pool_argmax[i].data() + std::size_t(n) * pooled.sample_size());
        }
        cur = &pooled;
        side /= 2;
        in_c = out_c;
    }

    const int flat = arch_.bottleneck_size();
    {
        const auto& dw = blocks_[2 * levels];
        const auto& db = blocks_[2 * levels + 1];
        tape.latent = Tensor<T>(B, arch_.latent);
        CMapMat<T> x(cur->data.data(), B, flat);
        CMapMat<T> wm(&params_[dw.offset], arch_.latent, flat);
        MapMat<T> z(tape.latent.data.data(), B, arch_.latent);
        z.noalias() = x * wm.transpose();
        for (int n = 0; n < B; ++n)
            for (int o = 0; o < arch_.latent; ++o) z(n, o) += params_[db.offset + o];
    }
    {
        const auto& dw = blocks_[2 * levels + 2];
        const auto& db = blocks_[2 * levels + 3];
        tape.dec_hidden = Tensor<T>(B, arch_.feature_maps.back(), side, side);
        CMapMat<T> z(tape.latent.data.data(), B, arch_.latent);
        CMapMat<T> wm(&params_[dw.offset], flat, arch_.latent);
        MapMat<T> hm(tape.dec_hidden.data.data(), B, flat);
        hm.noalias() = z * wm.transpose();
        for (int n = 0; n < B; ++n)
            for (int o = 0; o < flat; ++o) hm(n, o) += params_[db.offset + o];
        relu_inplace(tape.dec_hidden.data.data(), tape.dec_hidden.size());
    }

    tape.dec_up.resize(levels);
    tape.dec_act.resize(levels);
    cur = &tape.dec_hidden;
    std::size_t bi = 2 * levels + 4;
    for (int k = 0; k < levels; ++k) {
        const int j = levels - 1 - k;
        const int cin = arch_.feature_maps[j];
        const int cout = j > 0 ? arch_.feature_maps[j - 1] : arch_.channels;
        Tensor<T>& up = tape.dec_up[k];
        up = Tensor<T>(B, cin, 2 * side, 2 * side);
        Tensor<T>& act = tape.dec_act[k];
        act = Tensor<T>(B, cout, 2 * side, 2 * side);
        for (int n = 0; n < B; ++n) {
            upsample_forward(cur->sample(n), cin, side, side, up.sample(n));
            conv_forward(up.sample(n), cin, 2 * side, 2 * side, &params_[blocks_[bi].offset],
                         &params_[blocks_[bi + 1].offset], cout, act.sample(n), cols);
            if (j > 0) relu_inplace(act.sample(n), act.sample_size());
        }
        cur = &act;
        side *= 2;
        bi += 2;
    }
    tape.built = true;
}

template <typename T>
void Autoencoder<T>::backward(const Tape<T>& tape, const Tensor<T>& d_output, const Tensor<T>* d_latent,
                              Buffer<T>& grads) const {
    if (!tape.built) fail(Errc::GraphNotBuilt, "backward called without a forward pass");
    if (!d_output.same_shape(tape.output())) fail(Errc::ShapeMismatch, "output gradient shape");
    if (d_latent && !d_latent->same_shape(tape.latent)) fail(Errc::ShapeMismatch, "latent gradient shape");
    grads.assign(params_.size(), T(0));
    const int levels = int(arch_.feature_maps.size());
    const int B = tape.input.n;
    Buffer<T> cols, dcols;

    // Decoder, shallowest level (the output conv) first.
    Tensor<T> g = d_output;
    for (int k = levels - 1; k >= 0; --k) {
        const int j = levels - 1 - k;
        const int cin = arch_.feature_maps[j];
        const int cout = j > 0 ? arch_.feature_maps[j - 1] : arch_.channels;
        const std::size_t bi = 2 * levels + 4 + 2 * k;
        const Tensor<T>& up = tape.dec_up[k];
        const Tensor<T>& act = tape.dec_act[k];
        const int side = up.h;
        if (j > 0)
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!(act.data[i] > T(0))) g.data[i] = T(0);
        Tensor<T> dup(B, cin, side, side);
        Tensor<T> dprev(B, cin, side / 2, side / 2);
        for (int n = 0; n < B; ++n) {
            conv_backward(up.sample(n), cin, side, side, &params_[blocks_[bi].offset], cout, g.sample(n),
                          &grads[blocks_[bi].offset], &grads[blocks_[bi + 1].offset], dup.sample(n), cols, dcols);
            upsample_backward(dup.sample(n), cin, side / 2, side / 2, dprev.sample(n));
        }
        g = std::move(dprev);
    }

    const int flat = arch_.bottleneck_size();
    Tensor<T> dz(B, arch_.latent);
    {
        const auto& dw = blocks_[2 * levels + 2];
        const auto& db = blocks_[2 * levels + 3];
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(tape.dec_hidden.data[i] > T(0))) g.data[i] = T(0);
        CMapMat<T> gm(g.data.data(), B, flat);
        CMapMat<T> z(tape.latent.data.data(), B, arch_.latent);
        MapMat<T> dwm(&grads[dw.offset], flat, arch_.latent);
        dwm.noalias() += gm.transpose() * z;
        for (int o = 0; o < flat; ++o) grads[db.offset + o] += gm.col(o).sum();
        CMapMat<T> wm(&params_[dw.offset], flat, arch_.latent);
        MapMat<T> dzm(dz.data.data(), B, arch_.latent);
        dzm.noalias() = gm * wm;
    }
    if (d_latent)
        for (std::size_t i = 0; i < dz.size(); ++i) dz.data[i] += d_latent->data[i];

    Tensor<T> dflat(B, arch_.feature_maps.back(), arch_.bottleneck_side(), arch_.bottleneck_side());
    {
        const auto& dw = blocks_[2 * levels];
        const auto& db = blocks_[2 * levels + 1];
        CMapMat<T> dzm(dz.data.data(), B, arch_.latent);
        CMapMat<T> x(tape.enc_pooled.back().data.data(), B, flat);
        MapMat<T> dwm(&grads[dw.offset], arch_.latent, flat);
        dwm.noalias() += dzm.transpose() * x;
        for (int o = 0; o < arch_.latent; ++o) grads[db.offset + o] += dzm.col(o).sum();
        CMapMat<T> wm(&params_[dw.offset], arch_.latent, flat);
        MapMat<T> dx(dflat.data.data(), B, flat);
        dx.noalias() = dzm * wm;
    }

    g = std::move(dflat);
    for (int i = levels - 1; i >= 0; --i) {
        const Tensor<T>& act = tape.enc_act[i];
        const int out_c = arch_.feature_maps[i];
        const int in_c = i > 0 ? arch_.feature_maps[i - 1] : arch_.channels;
        const int side = act.h;
        const Tensor<T>& in = i > 0 ? tape.enc_pooled[i - 1] : tape.input;
        Tensor<T> dact(B, out_c, side, side);
        const auto& argmax = tape.pool_argmax[i];
        for (int n = 0; n < B; ++n) {
            T* da = dact.sample(n);
            const T* gs = g.sample(n);
            const std::uint32_t* am = argmax.data() + std::size_t(n) * g.sample_size();
            for (std::size_t o = 0; o < g.sample_size(); ++o) da[am[o]] += gs[o];
        }
        for (std::size_t k = 0; k < dact.size(); ++k)
            if (!(act.data[k] > T(0))) dact.data[k] = T(0);
        Tensor<T> din;
        if (i > 0) din = Tensor<T>(B, in_c, side, side);
        for (int n = 0; n < B; ++n)
            conv_backward(in.sample(n), in_c, side, side, &params_[blocks_[2 * i].offset], out_c, dact.sample(n),
                          &grads[blocks_[2 * i].offset], &grads[blocks_[2 * i + 1].offset],
                          i > 0 ? din.sample(n) : nullptr, cols, dcols);
        if (i > 0) g = std::move(din);
    }
}

template <typename T>
double mse_loss(const Tensor<T>& input, const Tensor<T>& output, Tensor<T>* d_output) {
    if (!input.same_shape(output)) fail(Errc::ShapeMismatch, "loss operands differ in shape");
    const double numel = double(input.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < input.size(); ++i) {
        const double d = double(output.data[i]) - double(input.data[i]);
        sum += d * d;
    }
    if (d_output) {
        *d_output = Tensor<T>(output.n, output.c, output.h, output.w);
        const double scale = 2.0 / numel;
        for (std::size_t i = 0; i < input.size(); ++i)
            d_output->data[i] = static_cast<T>(scale * (double(output.data[i]) - double(input.data[i])));
    }
    return sum / numel;
}

template <typename T>
double reconstruction_loss(const Autoencoder<T>& model, const Tensor<T>& batch) {
    return mse_loss(batch, model.reconstruct(batch));
}

template <typename T>
void Sgd<T>::step(std::span<T> params, std::span<const T> grads) {
    if (params.size() != grads.size()) fail(Errc::ShapeMismatch, "gradient count differs from parameter count");
    if (velocity.size() != params.size()) velocity.assign(params.size(), T(0));
    const T mu = static_cast<T>(momentum);
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = mu * velocity[i] + grads[i];
        params[i] -= rate * velocity[i];
    }
}

template class Autoencoder<float>;
template class Autoencoder<double>;
template struct Sgd<float>;
template struct Sgd<double>;
template double mse_loss(const Tensor<float>&, const Tensor<float>&, Tensor<float>*);
template double mse_loss(const Tensor<double>&, const Tensor<double>&, Tensor<double>*);
template double reconstruction_loss(const Autoencoder<float>&, const Tensor<float>&);
template double reconstruction_loss(const Autoencoder<double>&, const Tensor<double>&);

// ---------------------------------------------------------------------------
// Model file

std::vector<std::uint8_t> encode_model(const Model& m) {
    ByteWriter w;
    w.magic("DCNW1");
    w.u32(kModelFormatVersion);
    const Arch& a = m.arch();
    w.u32(std::uint32_t(a.channels));
    w.u32(std::uint32_t(a.input_size));
    w.u32(std::uint32_t(a.feature_maps.size()));
    for (int f : a.feature_maps) w.u32(std::uint32_t(f));
    w.u32(std::uint32_t(a.latent));
    w.u64(m.params().size());
    for (float p : m.params()) w.f32(p);
    const std::uint64_t sum = checksum(w.bytes().data(), w.bytes().size());
    w.u64(sum);
    return std::move(w.bytes());
}

Model decode_model(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (!r.expect_magic("DCNW1")) fail(Errc::BadMagic, "not a DCNW1 model file");
    const std::uint32_t version = r.u32();
    if (version != kModelFormatVersion)
        fail(Errc::VersionMismatch, "model format version " + std::to_string(version));
    if (bytes.size() < 8) fail(Errc::TruncatedFile, "model file too short");
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= std::uint64_t{bytes[bytes.size() - 8 + i]} << (8 * i);
    if (stored != checksum(bytes.data(), bytes.size() - 8)) fail(Errc::CorruptFile, "model checksum mismatch");

    Arch a;
    a.channels = int(r.u32());
    a.input_size = int(r.u32());
    const std::uint32_t levels = r.u32();
    if (levels == 0 || levels > 8) fail(Errc::CorruptFile, "bad level count");
    a.feature_maps.resize(levels);
    for (auto& f : a.feature_maps) {
        f = int(r.u32());
        if (f < 1 || f > 4096) fail(Errc::CorruptFile, "bad feature map count");
    }
    a.latent = int(r.u32());
    if (a.channels < 1 || a.channels > 256 || a.input_size < 1 || a.input_size > 4096 || a.latent < 1 ||
        a.latent > 4096)
        fail(Errc::CorruptFile, "architecture descriptor out of range");
    Model m(a);
    const std::uint64_t count = r.u64();
    if (count != m.params().size()) fail(Errc::CorruptFile, "parameter count does not match architecture");
    r.need(count * 4 + 8);
    for (auto& p : m.params()) {
        p = r.f32();
        if (!std::isfinite(p)) fail(Errc::NonFiniteData, "non-finite weight");
    }
    if (r.remaining() != 8) fail(Errc::CorruptFile, "trailing bytes in model file");
    return m;
}

void save_model(const Model& m, const std::filesystem::path& path) { write_file(path, encode_model(m)); }

Model load_model(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(Errc::MissingArtifact, "model file " + path.string() + " not found");
    return decode_model(read_file(path));
}

// ---------------------------------------------------------------------------
// Finite-difference check

namespace {

double total_loss(const Autoencoder<double>& m, const Tensor<double>& x, const std::vector<double>& centroid,
                  double lambda) {
    Tape<double> tape;
    m.forward(x, tape);
    double loss = mse_loss(x, tape.output());
    double cl = 0.0;
    for (int n = 0; n < x.n; ++n)
        for (int k = 0; k < tape.latent.c; ++k) {
            const double d = tape.latent.sample(n)[k] - centroid[k];
            cl += d * d;
        }
    return loss + lambda * cl / x.n;
}

}  // namespace

std::vector<GradcheckEntry> gradient_check(const Arch& arch, std::uint64_t seed, double eps, double lambda, int batch) {
    auto model = Autoencoder<double>::initialized(arch, seed);
    Rng rng(seed, "gradcheck");
    // Nonzero biases so every bias gradient is exercised away from symmetric points.
    for (const auto& b : model.blocks())
        if (b.name.ends_with(".b"))
            for (std::size_t i = 0; i < b.size; ++i) model.params()[b.offset + i] = rng.uniform(-0.2, 0.2);
    Tensor<double> x(batch, arch.channels, arch.input_size, arch.input_size);
    for (auto& v : x.data) v = rng.normal();
    std::vector<double> centroid(arch.latent);
    for (auto& c : centroid) c = rng.normal();

    Tape<double> tape;
    model.forward(x, tape);
    Tensor<double> d_out;
    mse_loss(x, tape.output(), &d_out);
    Tensor<double> d_lat(batch, arch.latent);
    for (int n = 0; n < batch; ++n)
        for (int k = 0; k < arch.latent; ++k)
            d_lat.sample(n)[k] = lambda * 2.0 * (tape.latent.sample(n)[k] - centroid[k]) / batch;
    Buffer<double> grads;
    model.backward(tape, d_out, &d_lat, grads);

    std::vector<GradcheckEntry> out;
    for (const auto& b : model.blocks()) {
        GradcheckEntry e{b.name, 0, 0.0, 0.0};
        for (std::size_t i = 0; i < b.size; ++i) {
            double& p = model.params()[b.offset + i];
            const double saved = p;
            p = saved + eps;
            const double lp = total_loss(model, x, centroid, lambda);
            p = saved - eps;
            const double lm = total_loss(model, x, centroid, lambda);
            p = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double analytic = grads[b.offset + i];
            const double abs_err = std::abs(numeric - analytic);
            const double scale = std::max(std::abs(numeric), std::abs(analytic));
            const double rel = scale > 1e-9 ? abs_err / scale : abs_err;
            e.max_rel_error = std::max(e.max_rel_error, rel);
            e.max_abs_error = std::max(e.max_abs_error, abs_err);
            ++e.checked;
        }
        out.push_back(e);
    }
    return out;
}

}  // namespace tvoc
