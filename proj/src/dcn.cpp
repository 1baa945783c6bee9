#include "tvoc/dcn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tvoc/bytes.hpp"
#include "tvoc/error.hpp"
#include "tvoc/kmeans.hpp"
#include "tvoc/rng.hpp"
#include "tvoc/volume.hpp"

namespace tvoc {

int assign(std::span<const double> latent, const Codebook& cb) {
    if (int(latent.size()) != cb.dim) fail(Errc::ShapeMismatch, "latent length differs from codebook dim");
    return nearest_centroid(cb.centroids, cb.dim, latent.data());
}

int assign(std::span<const float> latent, const Codebook& cb) {
    std::vector<double> z(latent.begin(), latent.end());
    return assign(std::span<const double>(z), cb);
}

void update_centroid(Codebook& cb, int k, std::span<const double> latent) {
    if (k < 0 || k >= cb.k) fail(Errc::InvalidArgument, "cluster index out of range");
    if (int(latent.size()) != cb.dim) fail(Errc::ShapeMismatch, "latent length differs from codebook dim");
    cb.counts[k] += 1.0;
    const double rate = 1.0 / cb.counts[k];
    double* c = cb.centroid(k);
    for (int d = 0; d < cb.dim; ++d) c[d] -= rate * (c[d] - latent[d]);
}

double cluster_loss(const Tensor<float>& latents, const Codebook& cb, std::span<const int> assignments) {
    if (latents.c != cb.dim) fail(Errc::ShapeMismatch, "latent length differs from codebook dim");
    if (std::size_t(latents.n) != assignments.size()) fail(Errc::ShapeMismatch, "one assignment per latent required");
    double sum = 0.0;
    for (int i = 0; i < latents.n; ++i) {
        const float* z = latents.sample(i);
        const double* c = cb.centroid(assignments[i]);
        for (int d = 0; d < cb.dim; ++d) {
            const double t = double(z[d]) - c[d];
            sum += t * t;
        }
    }
    return latents.n ? sum / latents.n : 0.0;
}

void split_holdout(std::size_t n, double fraction, std::uint64_t seed, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& heldout) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed, "holdout");
    rng.shuffle(std::span<std::size_t>(order));
    const auto n_held = static_cast<std::size_t>(std::floor(double(n) * fraction));
    train.assign(order.begin(), order.end() - std::ptrdiff_t(n_held));
    heldout.assign(order.end() - std::ptrdiff_t(n_held), order.end());
}

Tensor<float> make_batch(std::span<const Patch> patches, std::span<const std::size_t> indices) {
    if (indices.empty()) fail(Errc::InvalidArgument, "empty batch");
    const Patch& first = patches[indices.front()];
    Tensor<float> t(int(indices.size()), first.channels, first.size, first.size);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Patch& p = patches[indices[i]];
        if (p.data.size() != t.sample_size()) fail(Errc::ShapeMismatch, "patches differ in shape");
        std::copy(p.data.begin(), p.data.end(), t.sample(int(i)));
    }
    return t;
}

Tensor<float> encode_patches(const Model& model, std::span<const Patch> patches, std::size_t chunk) {
    Tensor<float> out(int(patches.size()), model.arch().latent);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < patches.size(); start += chunk) {
        const std::size_t end = std::min(patches.size(), start + chunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor<float> z = model.encode(make_batch(patches, idx));
        std::copy(z.data.begin(), z.data.end(), out.sample(int(start)));
    }
    return out;
}

namespace {

struct HeldoutEval {
    double recon = 0.0;
    double cluster = 0.0;
};

HeldoutEval evaluate(const Model& model, std::span<const Patch> patches, std::span<const std::size_t> held,
                     const Codebook* cb) {
    HeldoutEval e;
    if (held.empty()) return {std::nan(""), std::nan("")};
    double recon_sum = 0.0;
    double cluster_sum = 0.0;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < held.size(); start += chunk) {
        const auto part = held.subspan(start, std::min(chunk, held.size() - start));
        const Tensor<float> x = make_batch(patches, part);
        const Tensor<float> z = model.encode(x);
        recon_sum += mse_loss(x, model.decode(z)) * double(part.size());
        if (cb) {
            std::vector<int> a(part.size());
            for (std::size_t i = 0; i < part.size(); ++i)
                a[i] = assign(std::span<const float>(z.sample(int(i)), std::size_t(z.c)), *cb);
            cluster_sum += cluster_loss(z, *cb, a) * double(part.size());
        }
    }
    e.recon = recon_sum / double(held.size());
    e.cluster = cb ? cluster_sum / double(held.size()) : 0.0;
    return e;
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) fail(Errc::DivergenceDetected, std::string(what) + " became non-finite");
}

// Shared by pretrain and train_dcn so both consume identical batch streams; with
// cb == nullptr (or lambda == 0) the parameter trajectory is that of a plain autoencoder.
void run_epochs(Model& model, std::span<const Patch> patches, const TrainConfig& cfg,
                const std::vector<std::size_t>& train, const std::vector<std::size_t>& held, Codebook* cb,
                std::vector<int>* assignments, TrainReport& report) {
    Sgd<float> opt{cfg.lr, cfg.momentum, {}};
    Tape<float> tape;
    Tensor<float> d_out;
    Buffer<float> grads;
    std::vector<std::size_t> order(train.size());
    std::vector<int> empty_events(cb ? cb->k : 0, 0);
    std::vector<double> last_latent(cb ? train.size() * std::size_t(cb->dim) : 0);
    const std::size_t bs = std::size_t(std::max(1, cfg.batch_size));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(cfg.seed, "batches", std::uint64_t(epoch));
        rng.shuffle(std::span<std::size_t>(order));
        std::vector<char> seen(cb ? cb->k : 0, 0);
        if (cb) std::fill(cb->counts.begin(), cb->counts.end(), 0.0);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            std::vector<std::size_t> idx(end - start);
            for (std::size_t i = start; i < end; ++i) idx[i - start] = train[order[i]];
            const Tensor<float> x = make_batch(patches, idx);
            model.forward(x, tape);
            double loss = mse_loss(x, tape.output(), &d_out);
            if (cb) {
                const int B = x.n;
                Tensor<float> d_lat(B, cb->dim);
                std::vector<int> m(B);
                for (int i = 0; i < B; ++i) m[i] = (*assignments)[order[start + i]];
                loss += cfg.lambda * cluster_loss(tape.latent, *cb, m);
                const double scale = 2.0 * cfg.lambda / B;
                for (int i = 0; i < B; ++i) {
                    const double* c = cb->centroid(m[i]);
                    for (int d = 0; d < cb->dim; ++d)
                        d_lat.sample(i)[d] = static_cast<float>(scale * (double(tape.latent.sample(i)[d]) - c[d]));
                }
                check_finite(loss, "training loss");
                model.backward(tape, d_out, &d_lat, grads);
            } else {
                check_finite(loss, "training loss");
                model.backward(tape, d_out, nullptr, grads);
            }
            opt.step(model.params(), grads);
            loss_sum += loss;
            ++batches;

            if (cb) {
                const Tensor<float> z = model.encode(x);
                for (int i = 0; i < z.n; ++i) {
                    const std::size_t pos = order[start + i];
                    double* zl = last_latent.data() + pos * std::size_t(cb->dim);
                    for (int d = 0; d < cb->dim; ++d) zl[d] = z.sample(i)[d];
                    const std::span<const double> zs(zl, std::size_t(cb->dim));
                    const int k = assign(zs, *cb);
                    (*assignments)[pos] = k;
                    update_centroid(*cb, k, zs);
                    seen[k] = 1;
                }
            }
        }

        EpochStats st;
        st.epoch = epoch + 1;
        st.train_loss = batches ? loss_sum / double(batches) : 0.0;
        if (cb) {
            for (int k = 0; k < cb->k; ++k) {
                if (seen[k]) continue;
                if (++empty_events[k] >= 5)
                    fail(Errc::EmptyClusterUnrecoverable, "cluster " + std::to_string(k) + " emptied 5 times");
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < train.size(); ++i) {
                    const double* zl = last_latent.data() + i * std::size_t(cb->dim);
                    const double d = squared_distance(zl, cb->centroid((*assignments)[i]), cb->dim);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                std::copy_n(last_latent.data() + far * std::size_t(cb->dim), cb->dim, cb->centroid(k));
                (*assignments)[far] = k;
                ++st.reinitialized;
            }
        }
        const HeldoutEval ev = evaluate(model, patches, held, cb);
        st.heldout_recon = ev.recon;
        st.heldout_cluster = ev.cluster;
        st.heldout_loss = ev.recon + (cb ? cfg.lambda * ev.cluster : 0.0);
        if (!held.empty()) check_finite(st.heldout_loss, "held-out loss");
        report.epochs.push_back(st);
        if (cfg.on_epoch) cfg.on_epoch(st);
    }
}

}  // namespace

TrainReport pretrain(Model& model, std::span<const Patch> patches, const TrainConfig& cfg) {
    if (patches.empty()) fail(Errc::InvalidArgument, "no patches to train on");
    TrainReport report;
    split_holdout(patches.size(), cfg.holdout_fraction, cfg.seed, report.train_indices, report.heldout_indices);
    const HeldoutEval init = evaluate(model, patches, report.heldout_indices, nullptr);
    report.initial_heldout_recon = init.recon;
    report.initial_heldout_loss = init.recon;
    run_epochs(model, patches, cfg, report.train_indices, report.heldout_indices, nullptr, nullptr, report);
    return report;
}

Codebook init_clusters(const Model& model, std::span<const Patch> patches, int k, std::uint64_t seed,
                       int restarts) {
    if (k < 2) fail(Errc::InvalidArgument, "a codebook needs K >= 2");
    if (patches.size() < std::size_t(k)) fail(Errc::TooFewSamples, "fewer patches than clusters");
    const Tensor<float> z = encode_patches(model, patches);
    std::vector<double> pts(z.data.begin(), z.data.end());
    const KMeansResult km = kmeans(PointSet{pts, z.c}, k, seed, 1e-6, 300, restarts);
    Codebook cb;
    cb.k = k;
    cb.dim = z.c;
    cb.centroids = km.centroids;
    cb.counts.assign(km.sizes.begin(), km.sizes.end());
    cb.sequence_id = patches.front().sequence_id;
    return cb;
}

DcnResult train_dcn(Model& model, std::span<const Patch> patches, const TrainConfig& cfg) {
    if (patches.empty()) fail(Errc::InvalidArgument, "no patches to train on");
    DcnResult out;
    TrainReport& report = out.report;
    split_holdout(patches.size(), cfg.holdout_fraction, cfg.seed, report.train_indices, report.heldout_indices);

    std::vector<Patch> train_view;
    train_view.reserve(report.train_indices.size());
    for (std::size_t i : report.train_indices) train_view.push_back(patches[i]);
    out.codebook = init_clusters(model, train_view, cfg.k, substream(cfg.seed, "init-clusters"),
                                  cfg.kmeans_restarts);
    out.codebook.lambda = cfg.lambda;
    train_view.clear();

    const Tensor<float> z0 = encode_patches(model, patches);
    report.assignments.resize(report.train_indices.size());
    for (std::size_t i = 0; i < report.train_indices.size(); ++i)
        report.assignments[i] =
            assign(std::span<const float>(z0.sample(int(report.train_indices[i])), std::size_t(z0.c)), out.codebook);

    const HeldoutEval init = evaluate(model, patches, report.heldout_indices, &out.codebook);
    report.initial_heldout_recon = init.recon;
    report.initial_heldout_loss = init.recon + cfg.lambda * init.cluster;
    run_epochs(model, patches, cfg, report.train_indices, report.heldout_indices, &out.codebook, &report.assignments,
               report);
    for (double c : out.codebook.centroids)
        if (!std::isfinite(c)) fail(Errc::DivergenceDetected, "centroid became non-finite");
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_codebook(const Codebook& cb) {
    if (cb.k < 1 || cb.dim < 1 || cb.centroids.size() != std::size_t(cb.k) * cb.dim)
        fail(Errc::InvalidArgument, "inconsistent codebook");
    ByteWriter w;
    w.magic("DCNC1");
    w.u32(std::uint32_t(cb.k));
    w.u32(std::uint32_t(cb.dim));
    for (double c : cb.centroids) w.f32(static_cast<float>(c));
    w.f32(static_cast<float>(cb.lambda));
    w.str(cb.sequence_id);
    return std::move(w.bytes());
}

Codebook decode_codebook(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (!r.expect_magic("DCNC1")) fail(Errc::BadMagic, "not a DCNC1 codebook");
    Codebook cb;
    cb.k = int(r.u32());
    cb.dim = int(r.u32());
    if (cb.k < 1 || cb.k > 4096 || cb.dim < 1 || cb.dim > 4096) fail(Errc::BadHeader, "codebook shape out of range");
    r.need(std::uint64_t(cb.k) * cb.dim * 4);
    cb.centroids.resize(std::size_t(cb.k) * cb.dim);
    for (auto& c : cb.centroids) {
        c = r.f32();
        if (!std::isfinite(c)) fail(Errc::NonFiniteData, "non-finite centroid");
    }
    cb.lambda = r.f32();
    cb.sequence_id = r.str(256);
    if (r.remaining() != 0) fail(Errc::CorruptFile, "trailing bytes in codebook");
    cb.counts.assign(cb.k, 0.0);
    return cb;
}

void save_codebook(const Codebook& cb, const std::filesystem::path& path) { write_file(path, encode_codebook(cb)); }

Codebook load_codebook(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(Errc::MissingArtifact, "codebook " + path.string() + " not found");
    return decode_codebook(read_file(path));
}

}  // namespace tvoc
