#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tvoc/error.hpp"
#include "tvoc/nn.hpp"
#include "tvoc/parallel.hpp"

using namespace tvoc;

namespace {

// Plain nested loops, written from the layer definitions rather than the im2col path.
struct Naive {
    const Autoencoder<double>& m;

    const double* block(const std::string& name) const { return m.params().data() + m.block(name).offset; }

    static std::string name(const char* prefix, int i, const char* suffix) {
        return std::string(prefix) + std::to_string(i) + suffix;
    }

    std::vector<double> conv(const std::vector<double>& in, int cin, int side, int cout, const double* w, const double* b) const {
        std::vector<double> out(std::size_t(cout) * side * side);
        for (int o = 0; o < cout; ++o)
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x) {
                    double s = b[o];
                    for (int c = 0; c < cin; ++c)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int sy = y + ky - 1, sx = x + kx - 1;
                                if (sy < 0 || sx < 0 || sy >= side || sx >= side) continue;
                                s += w[((o * cin + c) * 3 + ky) * 3 + kx] * in[(std::size_t(c) * side + sy) * side + sx];
                            }
                    out[(std::size_t(o) * side + y) * side + x] = s;
                }
        return out;
    }

    static void relu(std::vector<double>& v) {
        for (double& x : v) x = std::max(0.0, x);
    }

    std::vector<double> encode(std::vector<double> cur) const {
        const Arch& a = m.arch();
        int side = a.input_size, cin = a.channels;
        for (std::size_t i = 0; i < a.feature_maps.size(); ++i) {
            const int cout = a.feature_maps[i];
            cur = conv(cur, cin, side, cout, block(name("enc.conv", int(i), ".w")), block(name("enc.conv", int(i), ".b")));
            relu(cur);
            std::vector<double> pooled(std::size_t(cout) * (side / 2) * (side / 2));
            for (int c = 0; c < cout; ++c)
                for (int y = 0; y < side / 2; ++y)
                    for (int x = 0; x < side / 2; ++x) {
                        double mx = -1e300;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                mx = std::max(mx, cur[(std::size_t(c) * side + 2 * y + dy) * side + 2 * x + dx]);
                        pooled[(std::size_t(c) * (side / 2) + y) * (side / 2) + x] = mx;
                    }
            cur = pooled;
            side /= 2;
            cin = cout;
        }
        const double* w = block("enc.dense.w");
        const double* b = block("enc.dense.b");
        std::vector<double> z(std::size_t(a.latent));
        for (int o = 0; o < a.latent; ++o) {
            z[o] = b[o];
            for (std::size_t i = 0; i < cur.size(); ++i) z[o] += w[o * cur.size() + i] * cur[i];
        }
        return z;
    }

    std::vector<double> decode(const std::vector<double>& z) const {
        const Arch& a = m.arch();
        const std::size_t flat = std::size_t(a.bottleneck_size());
        const double* w = block("dec.dense.w");
        const double* b = block("dec.dense.b");
        std::vector<double> cur(flat);
        for (std::size_t o = 0; o < flat; ++o) {
            cur[o] = b[o];
            for (int i = 0; i < a.latent; ++i) cur[o] += w[o * a.latent + i] * z[i];
        }
        relu(cur);
        int side = a.bottleneck_side();
        for (int j = int(a.feature_maps.size()) - 1; j >= 0; --j) {
            const int cin = a.feature_maps[j];
            const int cout = j > 0 ? a.feature_maps[j - 1] : a.channels;
            std::vector<double> up(std::size_t(cin) * 4 * side * side);
            for (int c = 0; c < cin; ++c)
                for (int y = 0; y < 2 * side; ++y)
                    for (int x = 0; x < 2 * side; ++x)
                        up[(std::size_t(c) * 2 * side + y) * 2 * side + x] = cur[(std::size_t(c) * side + y / 2) * side + x / 2];
            side *= 2;
            cur = conv(up, cin, side, cout, block(name("dec.conv", j, ".w")), block(name("dec.conv", j, ".b")));
            if (j > 0) relu(cur);
        }
        return cur;
    }
};

Tensor<double> random_batch(const Arch& a, int n, std::uint64_t seed) {
    Tensor<double> t(n, a.channels, a.input_size, a.input_size);
    Rng rng(seed);
    for (double& x : t.data) x = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("encoder and decoder agree with a naive loop implementation") {
    Arch a;
    a.channels = 2;
    a.input_size = 16;
    a.feature_maps = {6, 4, 3};
    a.latent = 5;
    Autoencoder<double> m = Autoencoder<double>::initialized(a, 3);
    Rng rng(4);
    for (double& p : m.params()) p += 0.05 * rng.normal();  // nonzero biases too
    const Tensor<double> x = random_batch(a, 3, 5);
    const Tensor<double> z = m.encode(x);
    const Tensor<double> r = m.reconstruct(x);
    const Naive naive{m};
    for (int n = 0; n < 3; ++n) {
        const std::vector<double> in(x.sample(n), x.sample(n) + x.sample_size());
        const auto zn = naive.encode(in);
        for (int k = 0; k < a.latent; ++k) CHECK(z.sample(n)[k] == doctest::Approx(zn[k]).epsilon(1e-12));
        const auto rn = naive.decode(zn);
        for (std::size_t i = 0; i < rn.size(); ++i) CHECK(r.sample(n)[i] == doctest::Approx(rn[i]).epsilon(1e-12));
    }
}

TEST_CASE("default architecture: 32x32 input, 160-wide bottleneck, 20-d latent") {
    const Arch a;
    CHECK(a.input_size == 32);
    CHECK(a.feature_maps == std::vector<int>{50, 20, 10});
    CHECK(a.bottleneck_size() == 160);
    CHECK(a.latent == 20);
    const Model m = Model::initialized(a, 1);
    CHECK(m.block("enc.dense.w").size == 160u * 20);
    CHECK(m.block("enc.conv0.w").size == 50u * 1 * 9);
}

TEST_CASE("every block passes the central-difference gradient check") {
    Arch a;
    a.channels = 1;
    a.input_size = 4;
    a.feature_maps = {3, 2};
    a.latent = 3;
    const auto entries = gradient_check(a, 17);
    REQUIRE_FALSE(entries.empty());
    for (const auto& e : entries) {
        INFO(e.block);
        CHECK(e.checked > 0);
        CHECK(e.max_rel_error <= 1e-4);
    }
}

TEST_CASE("encoding is identical for any thread count") {
    const Arch a;
    const Model m = Model::initialized(a, 2);
    Tensor<float> x(9, 1, 32, 32);
    Rng rng(6);
    for (float& v : x.data) v = static_cast<float>(rng.normal());
    set_thread_count(1);
    const Tensor<float> z1 = m.encode(x);
    set_thread_count(3);
    const Tensor<float> z3 = m.encode(x);
    set_thread_count(1);
    CHECK(z1.data == z3.data);
}

TEST_CASE("shape mismatches are rejected") {
    const Model m = Model::initialized(Arch{}, 1);
    Tensor<float> wrong(1, 2, 32, 32);
    CHECK_THROWS_AS(m.encode(wrong), Error);
    Tensor<float> latent(1, 7);
    CHECK_THROWS_AS(m.decode(latent), Error);
}

TEST_CASE("momentum SGD follows v <- mu v + g; p <- p - lr v") {
    Sgd<double> opt;
    opt.lr = 0.1;
    opt.momentum = 0.5;
    std::vector<double> p{1.0, -2.0};
    const std::vector<double> g{0.5, 1.0};
    opt.step(p, g);
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5));
    opt.step(p, g);
    CHECK(p[0] == doctest::Approx(1.0 - 0.05 - 0.1 * (0.5 * 0.5 + 0.5)));
    CHECK(p[1] == doctest::Approx(-2.0 - 0.1 - 0.1 * 1.5));
}
