// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
#include <boost/math/distributions/hypergeometric.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "tvoc/config.hpp"
#include "tvoc/dcn.hpp"
#include "tvoc/kmeans.hpp"
#include "tvoc/learners.hpp"
#include "tvoc/longitudinal.hpp"
#include "tvoc/nn.hpp"
#include "tvoc/parallel.hpp"
#include "tvoc/pipeline.hpp"
#include "tvoc/registration.hpp"
#include "tvoc/signature.hpp"
#include "tvoc/stats.hpp"
#include "tvoc/synth.hpp"
#include "tvoc/table.hpp"

using namespace tvoc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("tvoc-acceptance-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<int> assignments(const Model& model, std::span<const Patch> patches, const Codebook& cb) {
    const Tensor<float> z = encode_patches(model, patches);
    std::vector<int> out;
    for (int i = 0; i < z.n; ++i) out.push_back(assign(std::span<const float>(z.sample(i), std::size_t(cb.dim)), cb));
    return out;
}

double rotation_angle_between(const std::array<double, 9>& a, const std::array<double, 9>& b) {
    double trace = 0.0;
    for (int i = 0; i < 9; ++i) trace += a[i] * b[i];
    return std::acos(std::clamp((trace - 1.0) / 2.0, -1.0, 1.0));
}

// ---------------------------------------------------------------------------

Outcome gradient_check_criterion() {
    const auto t0 = std::chrono::steady_clock::now();
    Arch a;
    a.channels = 1;
    a.input_size = 4;
    a.feature_maps = {3, 2};
    a.latent = 3;
    const auto entries = gradient_check(a, 1, 1e-3);
    const double secs = seconds_since(t0);
    double worst = 0.0;
    std::size_t checked = 0;
    for (const auto& e : entries) {
        worst = std::max(worst, e.max_rel_error);
        checked += e.checked;
    }
    return {worst <= 1e-4 && secs < 10.0 && checked > 0,
            fmt("max rel error %.3g over %zu parameters, %.2f s", worst, checked, secs)};
}

Outcome dcn_criterion() {
    set_thread_count(1);
    const auto t0 = std::chrono::steady_clock::now();
    // Five single-echo textures, means 4 sd apart, mixed correlation lengths.
    SequenceSpec seq{"planted", 1, {}};
    const double corr[5] = {1.0, 2.0, 1.0, 2.5, 1.5};
    for (int c = 0; c < 5; ++c) seq.classes.push_back({{4.0 * c}, 1.0, corr[c]});
    const LabeledPatches lp = texture_patches(seq, 400, 32, 7);
    Arch a;
    a.channels = seq.echoes;
    Model model = Model::initialized(a, 11);
    TrainConfig cfg;
    cfg.seed = 3;
    cfg.epochs = 10;
    pretrain(model, lp.patches, cfg);
    const DcnResult r = train_dcn(model, lp.patches, cfg);
    const double ari = adjusted_rand_index(assignments(model, lp.patches, r.codebook), lp.labels);
    const double secs = seconds_since(t0);

    // lambda = 0: joint training must follow plain reconstruction training exactly.
    Arch small;
    small.input_size = 16;
    small.feature_maps = {8, 4};
    small.latent = 6;
    const LabeledPatches sp = texture_patches(seq, 40, 16, 9);
    TrainConfig zero;
    zero.epochs = 3;
    zero.lambda = 0.0;
    zero.seed = 4;
    Model plain = Model::initialized(small, 5), joint = plain;
    pretrain(plain, sp.patches, zero);
    train_dcn(joint, sp.patches, zero);
    double diff = 0.0;
    for (std::size_t i = 0; i < plain.params().size(); ++i)
        diff = std::max(diff, double(std::abs(plain.params()[i] - joint.params()[i])));

    return {ari >= 0.8 && secs <= 300.0 && diff == 0.0,
            fmt("ARI %.4f on %zu patches in %.1f s; lambda=0 max param diff %g", ari, lp.patches.size(), secs, diff)};
}

Outcome kmeans_criterion() {
    Rng rng(21);
    std::vector<double> pts(100);
    for (double& v : pts) v = rng.uniform(-5.0, 5.0);
    const PointSet ps{pts, 2};
    const int k = 4;
    const std::uint64_t seed = 8;
    const KMeansResult km = kmeans(ps, k, seed);

    // Naive Lloyd from the same k-means++ seeds.
    Rng seeding(seed, "kmeans++");
    std::vector<double> c = kmeans_pp_seed(ps, k, seeding);
    std::vector<int> label(50);
    for (int it = 0; it < 300; ++it) {
        for (int i = 0; i < 50; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                const double d = std::pow(pts[2 * i] - c[2 * j], 2) + std::pow(pts[2 * i + 1] - c[2 * j + 1], 2);
                if (d < best) {
                    best = d;
                    label[i] = j;
                }
            }
        }
        double shift = 0.0;
        for (int j = 0; j < k; ++j) {
            double sx = 0, sy = 0, n = 0;
            for (int i = 0; i < 50; ++i)
                if (label[i] == j) {
                    sx += pts[2 * i];
                    sy += pts[2 * i + 1];
                    n += 1;
                }
            if (n == 0) continue;
            shift = std::max(shift, std::hypot(sx / n - c[2 * j], sy / n - c[2 * j + 1]));
            c[2 * j] = sx / n;
            c[2 * j + 1] = sy / n;
        }
        if (shift <= 1e-6) break;
    }
    for (int i = 0; i < 50; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
            const double d = std::pow(pts[2 * i] - c[2 * j], 2) + std::pow(pts[2 * i + 1] - c[2 * j + 1], 2);
            if (d < best) {
                best = d;
                label[i] = j;
            }
        }
    }
    const bool same = km.labels == label;

    Codebook cb;
    cb.k = 1;
    cb.dim = 2;
    cb.centroids = {3.0, -3.0};
    cb.counts = {0.0};
    double sx = 0, sy = 0, worst = 0;
    for (int n = 1; n <= 1000; ++n) {
        const std::vector<double> z{rng.normal(), rng.normal()};
        update_centroid(cb, 0, z);
        sx += z[0];
        sy += z[1];
        worst = std::max({worst, std::abs(cb.centroids[0] - sx / n), std::abs(cb.centroids[1] - sy / n)});
    }
    return {same && worst <= 1e-9, fmt("labels %s naive Lloyd; running-mean max error %.3g", same ? "equal" : "differ from", worst)};
}

Outcome signature_criterion() {
    Rng rng(31);
    int exact = 0;
    double worst_sum = 0.0;
    bool bitwise = true;
    for (int t = 0; t < 100; ++t) {
        const int k = 2 + int(rng.below(9));
        const std::size_t n = 1 + rng.below(500);
        ClusterMap m;
        m.k = k;
        m.sequence_id = "t1w";
        std::vector<std::size_t> counts(std::size_t(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            m.positions.push_back({int(i), 0, 0});
            m.labels.push_back(int(rng.below(std::uint64_t(k))));
            ++counts[std::size_t(m.labels.back())];
        }
        Signature s = signature(m);
        bool ok = true;
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            ok &= s.values[std::size_t(j)] == double(counts[std::size_t(j)]) / double(n);
            sum += s.values[std::size_t(j)];
        }
        exact += ok;
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));

        // Fuse with two more random signatures and pull this one back out.
        std::vector<Signature> parts;
        std::vector<std::string> order{"dixon", "t1w", "t2star"};
        for (const std::string& id : order) {
            Signature p = s;
            if (id != "t1w") {
                ClusterMap o = m;
                for (int& l : o.labels) l = int(rng.below(std::uint64_t(k)));
                p = signature(o);
            }
            p.layout = {{id, k}};
            parts.push_back(p);
        }
        const Signature fused = fuse_signatures(parts, order);
        const Signature back = extract_span(fused, "t1w");
        bitwise &= back.values.size() == s.values.size() &&
                   std::memcmp(back.values.data(), s.values.data(), s.values.size() * sizeof(double)) == 0;
    }
    return {exact == 100 && worst_sum <= 1e-9 && bitwise,
            fmt("%d/100 exact, max |sum-1| %.3g, span extraction %s", exact, worst_sum, bitwise ? "bitwise equal" : "differs")};
}

Outcome transition_criterion() {
    // Identity transform on identical maps.
    Rng rng(41);
    ClusterMap m;
    m.k = 5;
    m.sequence_id = "t1w";
    m.stride = 4;
    for (int i = 0; i < 400; ++i) {
        m.positions.push_back({4 * (i % 20), 4 * (i / 20), 0});
        m.labels.push_back(i < 5 ? i : int(rng.below(5)));
    }
    const TransitionMatrix id = transition_matrix(m, m, RigidTransform::identity());
    bool identity = true;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) identity &= id.prob(i, j) == (i == j ? 1.0 : 0.0);

    // 50 synthetic subjects in two arms; empirical matrices from ground-truth maps.
    CohortSpec spec = default_cohort_spec(2, 25, 0.3);
    spec.images = false;
    spec.regions = 96;
    const auto subjects = generate_subjects(spec);
    double worst = 0.0;
    for (int arm = 0; arm < 2; ++arm) {
        std::vector<double> counts(25, 0.0);
        for (const SyntheticSubject& s : subjects) {
            if (s.arm != arm) continue;
            const TransitionMatrix t = transition_matrix(ground_truth_map(s.baseline, spec.spacing, 4),
                                                         ground_truth_map(s.followup, spec.spacing, 4), s.motion);
            for (int c = 0; c < 25; ++c) counts[std::size_t(c)] += t.counts[std::size_t(c)];
        }
        for (int i = 0; i < 5; ++i) {
            double row = 0.0;
            for (int j = 0; j < 5; ++j) row += counts[std::size_t(i * 5 + j)];
            for (int j = 0; j < 5; ++j)
                worst = std::max(worst, std::abs(counts[std::size_t(i * 5 + j)] / row -
                                                 spec.arms[std::size_t(arm)].kernel[std::size_t(i * 5 + j)]));
        }
    }
    return {identity && worst <= 0.05,
            fmt("identity %s; 50 subjects, max |empirical - planted| %.4f", identity ? "exact" : "not exact", worst)};
}

Outcome registration_criterion() {
    set_thread_count(1);
    const CohortSpec spec = default_cohort_spec(3, 2, 0.15);
    const SyntheticSubject s = generate_subject(spec, 0);
    const Volume& fixed = s.baseline.volumes[0];
    const Mask& fmask = s.baseline.mask;
    const Spacing sp = spec.spacing;
    constexpr double deg = std::numbers::pi / 180.0;
    struct Case {
        Vec3 vox;
        Vec3 angles_deg;
    };
    const std::vector<Case> cases{
        {{10, 0, 0}, {0, 0, 0}},   {{0, -10, 0}, {0, 0, 0}},    {{5, 5, 5}, {0, 0, 0}},   {{0, 0, 0}, {0, 0, 10}},
        {{0, 0, 0}, {10, 0, 0}},   {{0, 0, 0}, {0, -10, 0}},    {{-6, 4, -3}, {6, -6, 5}}, {{7, -7, 2}, {-4, 3, -9}},
    };
    double worst_t = 0.0, worst_r = 0.0, worst_time = 0.0;
    double mc[3] = {0, 0, 0}, cnt = 0;
    for (int z = 0; z < int(fmask.dims.nz); ++z)
        for (int y = 0; y < int(fmask.dims.ny); ++y)
            for (int x = 0; x < int(fmask.dims.nx); ++x)
                if (fmask.at(x, y, z)) {
                    mc[0] += x * sp.sx;
                    mc[1] += y * sp.sy;
                    mc[2] += z * sp.sz;
                    cnt += 1;
                }
    const Vec3 centroid{mc[0] / cnt, mc[1] / cnt, mc[2] / cnt};
    for (const Case& c : cases) {
        RigidTransform planted;
        planted.center = {0.5 * (fixed.dims.nx - 1) * sp.sx, 0.5 * (fixed.dims.ny - 1) * sp.sy,
                          0.5 * (fixed.dims.nz - 1) * sp.sz};
        planted.translation = {c.vox[0] * sp.sx, c.vox[1] * sp.sy, c.vox[2] * sp.sz};
        for (int i = 0; i < 3; ++i) planted.angles[i] = c.angles_deg[i] * deg;
        const Volume moving = resample(fixed, fixed.dims, sp, planted.inverse());
        const Mask mmask = resample_mask(fmask, fixed.dims, sp, planted.inverse());
        const auto t0 = std::chrono::steady_clock::now();
        const RegistrationResult r = register_rigid(fixed, fmask, moving, mmask);
        worst_time = std::max(worst_time, seconds_since(t0));
        const Vec3 a = r.transform.apply(centroid), b = planted.apply(centroid);
        const double spc[3] = {sp.sx, sp.sy, sp.sz};
        for (int i = 0; i < 3; ++i) worst_t = std::max(worst_t, std::abs(a[i] - b[i]) / spc[i]);
        worst_r = std::max(worst_r, rotation_angle_between(r.transform.rotation(), planted.rotation()) / deg);
    }
    return {worst_t <= 1.0 && worst_r <= 2.0 && worst_time <= 30.0,
            fmt("%zu pairs: max translation error %.3f voxels, rotation error %.3f deg, slowest %.1f s", cases.size(),
                worst_t, worst_r, worst_time)};
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(TVOC_CLI_PATH) + " " + args;
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_all(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Criteria 7 and 8 share one end-to-end run of the default configuration.
const fs::path& default_run() {
    static const fs::path dir = [] {
        const fs::path d = scratch("default");
        for (const char* stage : {"synth", "sample", "pretrain", "train", "encode", "predict", "respond"}) {
            const std::string log = (d / (std::string(stage) + ".log")).string();
            if (run_cli("--set out_dir=" + (d / "run").string() + " " + stage + " > " + log + " 2>&1") != 0)
                throw std::runtime_error(std::string("default pipeline failed at ") + stage);
        }
        return d / "run";
    }();
    return dir;
}

// Difference signatures rebuilt from the run's signature table; arms from the
// per-subject response table.
std::vector<DifferenceSignature> difference_signatures(const fs::path& run) {
    const Table sig = read_table(run / "signatures.csv");
    const Table arms = read_table(run / "response_subjects.csv");
    std::vector<SignatureSpan> layout;
    for (std::size_t c = 2; c < sig.header.size(); ++c) {
        const std::string seq = sig.header[c].substr(0, sig.header[c].rfind(':'));
        if (layout.empty() || layout.back().sequence_id != seq) layout.push_back({seq, 0});
        ++layout.back().k;
    }
    std::map<std::pair<std::string, std::string>, std::vector<double>> values;
    for (const auto& row : sig.rows) {
        std::vector<double> v;
        for (std::size_t c = 2; c < row.size(); ++c) v.push_back(std::stod(row[c]));
        values[{row[0], row[1]}] = std::move(v);
    }
    std::vector<DifferenceSignature> out;
    for (const auto& row : arms.rows) {
        const Signature a{values.at({row[0], "v0"}), layout}, b{values.at({row[0], "v1"}), layout};
        DifferenceSignature d = difference_signature(a, b);
        d.subject_id = row[0];
        d.arm = std::stod(row[1]);
        out.push_back(std::move(d));
    }
    return out;
}

Outcome response_criterion() {
    std::vector<DifferenceSignature> diffs = difference_signatures(default_run());
    ResponseConfig rc;
    rc.seed = substream(1, "respond");
    const ResponseResult r = response_analysis(diffs, rc);
    double p_high = 1.0;
    for (std::size_t i = 0; i < r.pairs.size(); ++i)
        if (r.pair_names[i] == "0 vs 2") p_high = r.pairs[i].p_corrected.value_or(1.0);

    // Null: arm labels shuffled across subjects, fresh folds each repetition.
    std::vector<double> arms;
    for (const auto& d : diffs) arms.push_back(d.arm);
    int clean = 0;
    for (int rep = 0; rep < 20; ++rep) {
        Rng rng(7, "acceptance-null", std::uint64_t(rep));
        std::vector<double> shuffled = arms;
        rng.shuffle(std::span<double>(shuffled));
        for (std::size_t i = 0; i < diffs.size(); ++i) diffs[i].arm = shuffled[i];
        ResponseConfig nc;
        nc.seed = substream(7, "acceptance-null-folds", std::uint64_t(rep));
        const ResponseResult n = response_analysis(diffs, nc);
        bool any = false;
        for (const TestResult& t : n.pairs) any |= t.p_corrected.value_or(1.0) < 0.05;
        clean += !any;
    }
    return {p_high < 0.01 && clean >= 18,
            fmt("placebo vs high p_corr %.3g (need < 0.01); null clean in %d of 20 (need >= 18)", p_high, clean)};
}

Outcome grade_criterion() {
    const Table t = read_table(default_run() / "predict.csv");
    double worst = 1.0;
    std::string detail;
    for (const auto& row : t.rows) {
        const double acc = std::stod(row[2]);
        worst = std::min(worst, acc);
        detail += (detail.empty() ? "" : ", ") + row[0] + " " + fmt("%.3f", acc);
    }
    return {!t.rows.empty() && worst >= 0.9, "5-fold accuracy " + detail + " (need >= 0.9 each)"};
}

// ---------------------------------------------------------------------------

Outcome stats_criterion() {
    Rng rng(51);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> a(5 + rng.below(20)), b(5 + rng.below(20));
        for (double& v : a) v = rng.normal();
        const double shift = rng.uniform(-1, 1), scale = rng.uniform(0.5, 2.0);
        for (double& v : b) v = shift + scale * rng.normal();
        // Welch t-test.
        auto moments = [](const std::vector<double>& v, double& m, double& s2) {
            m = 0;
            for (double x : v) m += x;
            m /= double(v.size());
            s2 = 0;
            for (double x : v) s2 += (x - m) * (x - m);
            s2 /= double(v.size() - 1);
        };
        double ma, va, mb, vb;
        moments(a, ma, va);
        moments(b, mb, vb);
        const double sa = va / double(a.size()), sb = vb / double(b.size());
        const double tt = (ma - mb) / std::sqrt(sa + sb);
        const double df = (sa + sb) * (sa + sb) / (sa * sa / double(a.size() - 1) + sb * sb / double(b.size() - 1));
        const double p_t = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(df), std::abs(tt)));
        worst = std::max(worst, std::abs(t_test(a, b).p - p_t));

        // Pearson on equal-length prefixes.
        const std::size_t n = std::min(a.size(), b.size());
        std::vector<double> x(a.begin(), a.begin() + std::ptrdiff_t(n)), y(b.begin(), b.begin() + std::ptrdiff_t(n));
        for (std::size_t i = 0; i < n; ++i) y[i] += shift * x[i];
        double mx, vx, my, vy;
        moments(x, mx, vx);
        moments(y, my, vy);
        double sxy = 0;
        for (std::size_t i = 0; i < n; ++i) sxy += (x[i] - mx) * (y[i] - my);
        const double r = sxy / (double(n - 1) * std::sqrt(vx * vy));
        const double tr = r * std::sqrt(double(n - 2) / (1 - r * r));
        const double p_r =
            2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(double(n - 2)), std::abs(tr)));
        const Correlation c = pearson(x, y);
        worst = std::max({worst, std::abs(c.r - r), std::abs(c.p - p_r)});

        // Fisher exact from hypergeometric probabilities.
        Table2x2 tab{};
        for (auto& row : tab)
            for (auto& v : row) v = std::int64_t(rng.below(15));
        const unsigned r1 = unsigned(tab[0][0] + tab[0][1]), c1 = unsigned(tab[0][0] + tab[1][0]);
        const unsigned total = unsigned(r1 + tab[1][0] + tab[1][1]);
        if (total == 0) continue;
        const boost::math::hypergeometric_distribution<double> h(r1, c1, total);
        const double p_obs = boost::math::pdf(h, unsigned(tab[0][0]));
        double p_f = 0.0;
        for (unsigned k = c1 > total - r1 ? c1 - (total - r1) : 0; k <= std::min(r1, c1); ++k) {
            const double pk = boost::math::pdf(h, k);
            if (pk <= p_obs * (1 + 1e-7)) p_f += pk;
        }
        worst = std::max(worst, std::abs(fisher_exact(tab) - std::min(1.0, p_f)));
    }

    // Permutation test against full enumeration: 4 vs 4 values, 70 splits.
    const std::vector<double> ga{0.3, 1.9, 2.2, 0.8}, gb{2.5, 3.1, 1.7, 2.9};
    std::vector<double> pooled(ga);
    pooled.insert(pooled.end(), gb.begin(), gb.end());
    auto diff = [&](unsigned mask) {
        double s1 = 0, s2 = 0;
        for (int i = 0; i < 8; ++i) (mask >> i & 1u ? s1 : s2) += pooled[std::size_t(i)];
        return s1 / 4 - s2 / 4;
    };
    const double obs = diff(0x0F);
    int hits = 0, splits = 0;
    for (unsigned mask = 0; mask < 256; ++mask) {
        if (__builtin_popcount(mask) != 4) continue;
        ++splits;
        hits += std::abs(diff(mask)) >= std::abs(obs) - 1e-12;
    }
    const double p_perm = permutation_test(ga, gb, 1000, 1).p;
    const bool perm_ok = p_perm == double(hits) / double(splits);

    const std::vector<double> one{0.01};
    const double bonf = bonferroni(one, 6)[0];
    const bool bonf_ok = std::abs(bonf - 0.06) <= 1e-15;
    return {worst <= 1e-6 && perm_ok && bonf_ok,
            fmt("max oracle deviation %.3g; permutation p %.6f vs enumeration %d/%d; Bonferroni 0.01 x 6 = %.4g", worst,
                p_perm, hits, splits, bonf)};
}

Outcome phenotype_criterion() {
    // Well-separated blobs.
    Matrix x(45, 3);
    std::vector<int> truth(45);
    Rng rng(61);
    for (std::size_t i = 0; i < 45; ++i) {
        truth[i] = int(i % 3);
        for (std::size_t d = 0; d < 3; ++d) x(i, d) = (d == std::size_t(truth[i]) ? 10.0 : 0.0) + 0.3 * rng.normal();
    }
    const double ari = adjusted_rand_index(discover_phenotypes(x, 3).labels, truth);

    // Average linkage against a naive O(n^3)-per-merge recomputation on 12 points.
    Matrix y(12, 2);
    for (double& v : y.data) v = rng.normal();
    const Dendrogram d = agglomerate(y);
    std::vector<std::set<int>> clusters;
    for (int i = 0; i < 12; ++i) clusters.push_back({i});
    std::map<int, std::set<int>> node_members;
    for (int i = 0; i < 12; ++i) node_members[i] = {i};
    bool merges_ok = d.merges.size() == 11;
    for (std::size_t step = 0; merges_ok && step < 11; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < clusters.size(); ++i)
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                double s = 0;
                for (int p : clusters[i])
                    for (int q : clusters[j]) s += std::hypot(y(std::size_t(p), 0) - y(std::size_t(q), 0), y(std::size_t(p), 1) - y(std::size_t(q), 1));
                s /= double(clusters[i].size() * clusters[j].size());
                if (s < best) {
                    best = s;
                    bi = i;
                    bj = j;
                }
            }
        std::set<int> merged = clusters[bi];
        merged.insert(clusters[bj].begin(), clusters[bj].end());
        clusters.erase(clusters.begin() + std::ptrdiff_t(bj));
        clusters[bi] = merged;
        const Merge& mg = d.merges[step];
        std::set<int> got = node_members[mg.a];
        got.insert(node_members[mg.b].begin(), node_members[mg.b].end());
        node_members[12 + int(step)] = got;
        merges_ok = got == merged && std::abs(mg.height - best) <= 1e-12 * std::max(1.0, best);
    }

    // Null associations: independent phenotype labels and grades, 25 cohorts x 5 phenotypes x 4 grades.
    int flagged = 0, cells = 0;
    for (int c = 0; c < 25; ++c) {
        PhenotypeAssignment a;
        a.p = 5;
        std::vector<std::optional<std::int64_t>> grades;
        for (int i = 0; i < 400; ++i) {
            a.labels.push_back(1 + int(rng.below(5)));
            grades.push_back(std::int64_t(rng.below(4)));
        }
        for (const Association& as : phenotype_associations(a, grades, 0.05)) {
            ++cells;
            flagged += as.flag != 0;
        }
    }
    // Three binomial standard deviations around 5%.
    const double expected = 0.05 * cells, sd = std::sqrt(cells * 0.05 * 0.95);
    const bool null_ok = std::abs(flagged - expected) <= 3.0 * sd;
    return {ari == 1.0 && merges_ok && null_ok,
            fmt("blob ARI %.3f; linkage %s naive oracle; null flags %d/%d (%.1f%%, expected %.0f +- %.1f)", ari,
                merges_ok ? "matches" : "differs from", flagged, cells, 100.0 * flagged / cells, expected, 3.0 * sd)};
}

// ---------------------------------------------------------------------------

Outcome determinism_criterion() {
    const fs::path dir = scratch("determinism");
    const std::string cfg =
        "synth.subjects_per_arm = 4\nsynth.nx = 64\nsynth.ny = 64\nsynth.nz = 8\npatch.count = 480\n"
        "dcn.pretrain_epochs = 2\ndcn.epochs = 2\nanalysis.trees = 50\nanalysis.n_perm = 200\n"
        "analysis.phenotypes = 3\nanalysis.folds = 3\n";
    std::ofstream(dir / "small.cfg") << cfg;
    const std::string base = "-c " + (dir / "small.cfg").string() + " --set out_dir=";
    const int rc1 = run_cli(base + (dir / "a").string() + " --threads 1 all > " + (dir / "a.log").string() + " 2>&1");
    const int rc2 = run_cli(base + (dir / "b").string() + " --threads 1 all > " + (dir / "b.log").string() + " 2>&1");
    if (rc1 != 0 || rc2 != 0) return {false, fmt("pipeline exit codes %d and %d", rc1, rc2)};
    std::size_t compared = 0, differing = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
        const fs::path rel = fs::relative(e.path(), dir / "a");
        ++compared;
        if (!fs::exists(dir / "b" / rel) || read_all(e.path()) != read_all(dir / "b" / rel)) ++differing;
    }
    return {compared > 0 && differing == 0, fmt("%zu CSV files compared, %zu differ", compared, differing)};
}

}  // namespace

int main() {
    set_thread_count(1);
    struct Entry {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Entry> criteria{
        {1, "gradient check", gradient_check_criterion},
        {2, "DCN cluster recovery", dcn_criterion},
        {3, "k-means and online centroids", kmeans_criterion},
        {4, "signatures and fusion", signature_criterion},
        {5, "transition matrices", transition_criterion},
        {6, "rigid registration", registration_criterion},
        {7, "treatment response", response_criterion},
        {8, "grade prediction", grade_criterion},
        {9, "statistical tests", stats_criterion},
        {10, "phenotypes and associations", phenotype_criterion},
        {11, "single-thread rerun determinism", determinism_criterion},
    };
    int failed = 0;
    for (const Entry& e : criteria) {
        Outcome o;
        try {
            o = e.run();
        } catch (const std::exception& ex) {
            o = {false, std::string("exception: ") + ex.what()};
        }
        failed += !o.pass;
        std::printf("criterion %2d %-34s %s  %s\n", e.id, e.name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
