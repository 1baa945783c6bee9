#include "tvoc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "tvoc/error.hpp"
#include "tvoc/parallel.hpp"
#include "tvoc/rng.hpp"
#include "tvoc/table.hpp"

namespace tvoc {

CohortSpec default_cohort_spec(int n_arms, int subjects_per_arm, double effect) {
    CohortSpec s;
    s.k_true = 5;
    s.base_proportions = {0.3, 0.25, 0.2, 0.15, 0.1};

    // Each graded class stands out somewhere (class 3 in t1w and the dixon water echo,
    // class 1 in the dixon fat echo, class 2 in t2star). Evenly spaced means would not survive
    // per-volume z-scoring: the shift from a subject's class mix is about half a gap.
    SequenceSpec t1w{"t1w", 1, {}};
    const double t1_mean[5] = {0, 3, 6, 18, 9}, t1_corr[5] = {1.0, 2.0, 1.0, 2.5, 1.5};
    for (int c = 0; c < 5; ++c) t1w.classes.push_back({{t1_mean[c]}, 1.0, t1_corr[c]});

    SequenceSpec dixon{"dixon", 2, {}};
    const double dx0[5] = {10, 4, 7, 20, 2}, dx1[5] = {2, 18, 3, 4, 2}, dx_corr[5] = {2.0, 1.0, 1.5, 1.0, 2.5};
    for (int c = 0; c < 5; ++c) dixon.classes.push_back({{dx0[c], dx1[c]}, 1.2, dx_corr[c]});

    SequenceSpec t2s{"t2star", 3, {}};
    const double m0[5] = {10, 9, 22, 11, 12}, rate[5] = {0.1, 0.5, 0.05, 0.3, 0.8}, t2_corr[5] = {1.5, 1.5, 2.0, 1.0, 1.0};
    for (int c = 0; c < 5; ++c) {
        ClassTexture t{{}, 0.8, t2_corr[c]};
        for (int e = 0; e < 3; ++e) t.mean.push_back(m0[c] * std::exp(-rate[c] * e));
        t2s.classes.push_back(t);
    }
    s.sequences = {t1w, dixon, t2s};

    std::vector<std::string> names;
    if (n_arms == 3) names = {"placebo", "low", "high"};
    else if (n_arms == 4) names = {"placebo", "low", "mid", "high"};
    else
        for (int a = 0; a < n_arms; ++a) names.push_back("arm" + std::to_string(a));
    const int k = s.k_true;
    for (int a = 0; a < n_arms; ++a) {
        ArmSpec arm{names[std::size_t(a)], double(a), subjects_per_arm, std::vector<double>(std::size_t(k * k), 0.0)};
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) arm.kernel[std::size_t(i * k + j)] = i == j ? 0.9 : 0.1 / (k - 1);
        const double shift = std::min(arm.kernel[1 * k + 1], effect * a);
        arm.kernel[1 * k + 1] -= shift;
        arm.kernel[1 * k + 0] += shift;
        s.arms.push_back(arm);
    }

    s.grades = {
        {"steatosis", {0, 1, 0, 0, 0}, {0.15, 0.25, 0.35}},
        {"inflammation", {0, 0, 1, 0, 0}, {0.12, 0.2, 0.28}},
        {"fibrosis", {0, 0, 0, 1, 0}, {0.08, 0.14, 0.2}},
    };
    return s;
}

void validate(const CohortSpec& spec) {
    const int k = spec.k_true;
    auto bad = [](const std::string& m) { fail(Errc::SpecInvalid, m); };
    if (k < 1) bad("k_true must be positive");
    if (spec.dims.nx < 8 || spec.dims.ny < 8 || spec.dims.nz < 1 || spec.dims.nx > kMaxDim || spec.dims.ny > kMaxDim ||
        spec.dims.nz > kMaxDim)
        bad("volume dims out of range");
    if (!(spec.spacing.sx > 0 && spec.spacing.sy > 0 && spec.spacing.sz > 0)) bad("spacing must be positive");
    if (int(spec.base_proportions.size()) != k) bad("base_proportions needs k_true entries");
    for (double p : spec.base_proportions)
        if (!(p > 0)) bad("base proportions must be positive");
    if (spec.regions < 1) bad("at least one region is required");
    if (!(spec.region_z_weight > 0)) bad("region_z_weight must be positive");
    if (spec.arms.empty()) bad("at least one arm is required");
    for (const ArmSpec& a : spec.arms) {
        if (a.n_subjects < 0) bad("negative subject count in arm " + a.name);
        if (int(a.kernel.size()) != k * k) bad("kernel of arm " + a.name + " is not K x K");
        for (int i = 0; i < k; ++i) {
            double s = 0.0;
            for (int j = 0; j < k; ++j) {
                const double v = a.kernel[std::size_t(i * k + j)];
                if (!(v >= 0.0)) bad("negative kernel entry in arm " + a.name);
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-9) bad("kernel row " + std::to_string(i) + " of arm " + a.name + " does not sum to 1");
        }
    }
    for (const GradeRule& g : spec.grades) {
        if (int(g.weights.size()) != k) bad("grade rule " + g.name + " needs k_true weights");
        if (!std::is_sorted(g.thresholds.begin(), g.thresholds.end())) bad("grade thresholds must ascend");
    }
    if (spec.images) {
        if (spec.sequences.empty()) bad("at least one sequence is required");
        for (const SequenceSpec& s : spec.sequences) {
            if (s.echoes < 1 || int(s.classes.size()) != k) bad("sequence " + s.id + " needs k_true class textures");
            for (const ClassTexture& t : s.classes)
                if (int(t.mean.size()) != s.echoes || !(t.sd > 0) || t.correlation < 0)
                    bad("bad texture parameters in sequence " + s.id);
        }
        for (int a = 0; a < k; ++a)
            for (int b = a + 1; b < k; ++b) {
                bool separated = false;
                for (const SequenceSpec& s : spec.sequences)
                    for (int e = 0; e < s.echoes; ++e) {
                        const ClassTexture &ta = s.classes[std::size_t(a)], &tb = s.classes[std::size_t(b)];
                        const double pooled = std::sqrt(0.5 * (ta.sd * ta.sd + tb.sd * tb.sd));
                        if (std::abs(ta.mean[std::size_t(e)] - tb.mean[std::size_t(e)]) >= 3.0 * pooled) separated = true;
                    }
                if (!separated)
                    bad("classes " + std::to_string(a) + " and " + std::to_string(b) + " are not separable in any sequence");
            }
    }
}

std::vector<float> gaussian_field(Dims dims, double sigma, Rng& rng) {
    const std::size_t n = dims.voxels();
    std::vector<float> f(n);
    for (float& v : f) v = static_cast<float>(rng.normal());
    if (sigma < 0.3) return f;
    const int r = int(std::ceil(3.0 * sigma));
    std::vector<double> w(std::size_t(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) sum += w[std::size_t(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    double sq = 0.0;
    for (double& v : w) {
        v /= sum;
        sq += v * v;
    }
    const int nd[3] = {int(dims.nx), int(dims.ny), int(dims.nz)};
    const std::size_t stride[3] = {1, dims.nx, std::size_t(dims.nx) * dims.ny};
    std::vector<double> line, out;
    // Periodic boundaries keep the field stationary, so the variance is exactly sq^3 everywhere.
    for (int axis = 0; axis < 3; ++axis) {
        const int len = nd[axis];
        line.resize(std::size_t(len));
        out.resize(std::size_t(len));
        for (std::size_t base = 0; base < n; ++base) {
            if ((base / stride[axis]) % std::size_t(len) != 0) continue;
            for (int i = 0; i < len; ++i) line[std::size_t(i)] = f[base + std::size_t(i) * stride[axis]];
            for (int i = 0; i < len; ++i) {
                double s = 0.0;
                for (int o = -r; o <= r; ++o) s += w[std::size_t(o + r)] * line[std::size_t(((i + o) % len + len) % len)];
                out[std::size_t(i)] = s;
            }
            for (int i = 0; i < len; ++i) f[base + std::size_t(i) * stride[axis]] = static_cast<float>(out[std::size_t(i)]);
        }
    }
    const double scale = 1.0 / std::sqrt(sq * sq * sq);
    for (float& v : f) v = static_cast<float>(v * scale);
    return f;
}

namespace {

std::vector<double> class_proportions(const std::vector<int>& region_class, const std::vector<double>& size, int k) {
    std::vector<double> p(std::size_t(k), 0.0);
    double total = 0.0;
    for (std::size_t r = 0; r < size.size(); ++r) {
        p[std::size_t(region_class[r])] += size[r];
        total += size[r];
    }
    for (double& v : p) v /= total;
    return p;
}

std::vector<std::int64_t> apply_grades(const CohortSpec& spec, const std::vector<double>& p, double* min_gap) {
    std::vector<std::int64_t> g;
    double gap = std::numeric_limits<double>::infinity();
    for (const GradeRule& rule : spec.grades) {
        double score = 0.0;
        for (int c = 0; c < spec.k_true; ++c) score += rule.weights[std::size_t(c)] * p[std::size_t(c)];
        std::int64_t level = 0;
        for (double t : rule.thresholds) {
            if (score >= t) ++level;
            gap = std::min(gap, std::abs(score - t));
        }
        g.push_back(level);
    }
    if (min_gap) *min_gap = gap;
    return g;
}

int arm_of(const CohortSpec& spec, int index) {
    int acc = 0;
    for (std::size_t a = 0; a < spec.arms.size(); ++a) {
        acc += spec.arms[a].n_subjects;
        if (index < acc) return int(a);
    }
    fail(Errc::InvalidArgument, "subject index beyond cohort size");
}

int total_subjects(const CohortSpec& spec) {
    int n = 0;
    for (const ArmSpec& a : spec.arms) n += a.n_subjects;
    return n;
}

std::string subject_name(int index) {
    std::string s = std::to_string(index + 1);
    return "s" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

void render_images(const CohortSpec& spec, SyntheticVisit& v, int subject, int visit) {
    const std::size_t n = spec.dims.voxels();
    for (std::size_t si = 0; si < spec.sequences.size(); ++si) {
        const SequenceSpec& seq = spec.sequences[si];
        Volume vol(spec.dims, std::uint32_t(seq.echoes), spec.spacing, seq.id);
        Rng bg(spec.seed, "background", std::uint64_t(subject * 4096 + visit * 64 + int(si)));
        for (float& x : vol.data) x = static_cast<float>(0.1 * bg.normal());
        for (int c = 0; c < spec.k_true; ++c) {
            bool present = false;
            for (std::int16_t t : v.truth) present |= t == c;
            if (!present) continue;
            Rng rng(spec.seed, "texture",
                    (std::uint64_t(subject) << 24) | (std::uint64_t(visit) << 16) | (std::uint64_t(si) << 8) | std::uint64_t(c));
            const ClassTexture& tex = seq.classes[std::size_t(c)];
            const std::vector<float> field = gaussian_field(spec.dims, tex.correlation, rng);
            for (std::size_t i = 0; i < n; ++i) {
                if (v.truth[i] != c) continue;
                for (int e = 0; e < seq.echoes; ++e)
                    vol.data[std::size_t(e) * n + i] = static_cast<float>(tex.mean[std::size_t(e)] + tex.sd * field[i]);
            }
        }
        v.volumes.push_back(std::move(vol));
    }
}

}  // namespace

SyntheticSubject generate_subject(const CohortSpec& spec, int index) {
    const int k = spec.k_true;
    const Dims d = spec.dims;
    SyntheticSubject s;
    s.id = subject_name(index);
    s.arm = arm_of(spec, index);
    Rng rng(spec.seed, "subject", std::uint64_t(index));

    // Organ mask: elliptical slices, flattened along z (quartic) so end slices stay
    // wide enough for whole patches. A little per-subject jitter.
    const double cx = 0.5 * (d.nx - 1) + rng.uniform(-2, 2), cy = 0.5 * (d.ny - 1) + rng.uniform(-2, 2);
    const double cz = 0.5 * (d.nz - 1) + rng.uniform(-0.5, 0.5);
const double ax = 0.48 * d.nx * rng.uniform(0.95, 1.0), ay = 0.47 * d.ny * rng.uniform(0.95, 1.0);
    const double az = std::max(0.6, 0.45 * d.nz * rng.uniform(0.95, 1.0));
    Mask mask(d, spec.spacing);
    std::vector<std::size_t> inside;
    for (int z = 0; z < int(d.nz); ++z)
        for (int y = 0; y < int(d.ny); ++y)
            for (int x = 0; x < int(d.nx); ++x) {
                const double u = (x - cx) / ax, v = (y - cy) / ay, w = (z - cz) / az;
                if (u * u + v * v + w * w * w * w <= 1.0) {
                    mask.set(x, y, z, true);
                    inside.push_back(mask.index(x, y, z));
                }
            }
    if (inside.size() < std::size_t(spec.regions)) fail(Errc::SpecInvalid, "mask smaller than the region count");

    // Voronoi regions around distinct in-mask seeds (physical distance).
    std::vector<std::size_t> pool = inside;
    std::vector<std::array<double, 3>> seeds;
    for (int r = 0; r < spec.regions; ++r) {
        const std::size_t j = std::size_t(r) + std::size_t(rng.below(pool.size() - std::size_t(r)));
        std::swap(pool[std::size_t(r)], pool[j]);
        const std::size_t idx = pool[std::size_t(r)];
        seeds.push_back({double(idx % d.nx) * spec.spacing.sx, double((idx / d.nx) % d.ny) * spec.spacing.sy,
                         double(idx / (std::size_t(d.nx) * d.ny)) * spec.spacing.sz});
    }
    std::vector<int> region(d.voxels(), -1);
    s.region_size.assign(std::size_t(spec.regions), 0.0);
    const double zw = spec.region_z_weight * spec.region_z_weight;
    for (std::size_t idx : inside) {
        const double p[3] = {double(idx % d.nx) * spec.spacing.sx, double((idx / d.nx) % d.ny) * spec.spacing.sy,
                             double(idx / (std::size_t(d.nx) * d.ny)) * spec.spacing.sz};
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int r = 0; r < spec.regions; ++r) {
            const auto& q = seeds[std::size_t(r)];
            const double dd = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + zw * (p[2] - q[2]) * (p[2] - q[2]);
            if (dd < best_d) {
                best_d = dd;
                best = r;
            }
        }
        region[idx] = best;
        s.region_size[std::size_t(best)] += 1.0;
    }
    const double total = double(inside.size());

    // Baseline classes: greedy largest-deficit assignment towards a jittered target mix,
    // redrawn until every grade score clears its thresholds by the margin.
    std::vector<int> order(std::size_t(spec.regions));
    for (int attempt = 0; attempt < 500; ++attempt) {
        std::vector<double> target(static_cast<std::size_t>(k));
        double ts = 0.0;
        for (int c = 0; c < k; ++c) ts += target[std::size_t(c)] = spec.base_proportions[std::size_t(c)] * std::exp(spec.proportion_spread * rng.normal());
        for (double& t : target) t /= ts;
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(std::span<int>(order));
        std::vector<double> have(std::size_t(k), 0.0);
        s.region_class_t0.assign(std::size_t(spec.regions), 0);
        for (int r : order) {
            int best = 0;
            double deficit = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double dfc = target[std::size_t(c)] * total - have[std::size_t(c)];
                if (dfc > deficit) {
                    deficit = dfc;
                    best = c;
                }
            }
            s.region_class_t0[std::size_t(r)] = best;
            have[std::size_t(best)] += s.region_size[std::size_t(r)];
        }
        double gap = 0.0;
        apply_grades(spec, class_proportions(s.region_class_t0, s.region_size, k), &gap);
        if (gap >= spec.grade_margin) break;
    }

    // Follow-up relabeling: systematic sampling over region mass within each class, so
    // the mass moving i -> j has expectation exactly kernel(i, j).
    const std::vector<double>& kernel = spec.arms[std::size_t(s.arm)].kernel;
    s.region_class_t1 = s.region_class_t0;
    for (int c = 0; c < k; ++c) {
        std::vector<int> members;
        for (int r = 0; r < spec.regions; ++r)
            if (s.region_class_t0[std::size_t(r)] == c) members.push_back(r);
        rng.shuffle(std::span<int>(members));
        const double u = rng.uniform();
        double mass = 0.0;
        for (int r : members) mass += s.region_size[std::size_t(r)];
        double cum = 0.0;
        for (int r : members) {
            double pos = (cum + 0.5 * s.region_size[std::size_t(r)]) / mass + u;
            pos -= std::floor(pos);
            cum += s.region_size[std::size_t(r)];
            int to = k - 1;
            double acc = 0.0;
            for (int j = 0; j < k; ++j) {
                acc += kernel[std::size_t(c * k + j)];
                if (pos < acc) {
                    to = j;
                    break;
                }
            }
            s.region_class_t1[std::size_t(r)] = to;
        }
    }

    // Follow-up motion.
    if (spec.motion_mm > 0.0 || spec.motion_deg > 0.0) {
        const double rad = spec.motion_deg * std::numbers::pi / 180.0;
        for (double& a : s.motion.angles) a = rng.uniform(-rad, rad);
        for (double& t : s.motion.translation) t = rng.uniform(-spec.motion_mm, spec.motion_mm);
        s.motion.center = {0.5 * (d.nx - 1) * spec.spacing.sx, 0.5 * (d.ny - 1) * spec.spacing.sy,
                           0.5 * (d.nz - 1) * spec.spacing.sz};
    }

    auto make_visit = [&](const std::string& id, const std::vector<int>& classes, bool moved, int visit) {
        SyntheticVisit v;
        v.id = id;
        v.truth.assign(d.voxels(), -1);
        if (!moved) {
            for (std::size_t idx : inside) v.truth[idx] = std::int16_t(classes[std::size_t(region[idx])]);
        } else {
            // Observed frame q shows anatomy at motion^-1(q); nearest-neighbor label lookup.
            const RigidTransform inv = s.motion.inverse();
            for (int z = 0; z < int(d.nz); ++z)
                for (int y = 0; y < int(d.ny); ++y)
                    for (int x = 0; x < int(d.nx); ++x) {
                        const Vec3 p = inv.apply({x * double(spec.spacing.sx), y * double(spec.spacing.sy), z * double(spec.spacing.sz)});
                        const int ix = int(std::lround(p[0] / spec.spacing.sx)), iy = int(std::lround(p[1] / spec.spacing.sy)),
                                  iz = int(std::lround(p[2] / spec.spacing.sz));
                        if (ix < 0 || iy < 0 || iz < 0 || ix >= int(d.nx) || iy >= int(d.ny) || iz >= int(d.nz)) continue;
                        const int r = region[mask.index(ix, iy, iz)];
                        if (r >= 0) v.truth[mask.index(x, y, z)] = std::int16_t(classes[std::size_t(r)]);
                    }
        }
        v.mask = Mask(d, spec.spacing);
        for (std::size_t i = 0; i < v.truth.size(); ++i) v.mask.data[i] = v.truth[i] >= 0 ? 1 : 0;
        v.proportions = class_proportions(classes, s.region_size, k);
        v.grades = apply_grades(spec, v.proportions, nullptr);
        if (spec.images) render_images(spec, v, index, visit);
        return v;
    };
    const bool moved = spec.motion_mm > 0.0 || spec.motion_deg > 0.0;
    s.baseline = make_visit("v0", s.region_class_t0, false, 0);
    s.followup = make_visit("v1", s.region_class_t1, moved, 1);
    return s;
}

std::vector<SyntheticSubject> generate_subjects(const CohortSpec& spec) {
    validate(spec);
    std::vector<SyntheticSubject> out(std::size_t(total_subjects(spec)));
    parallel_for(out.size(), [&](std::size_t i) { out[i] = generate_subject(spec, int(i)); });
    return out;
}

Manifest generate_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir) {
    validate(spec);
    const int n = total_subjects(spec);
    Manifest m;
    m.base_dir = out_dir;
    m.subjects.resize(std::size_t(n));
    std::vector<std::vector<std::string>> truth_rows(static_cast<std::size_t>(n));
    parallel_for(std::size_t(n), [&](std::size_t i) {
        const SyntheticSubject s = generate_subject(spec, int(i));
        SubjectEntry& entry = m.subjects[i];
        entry.id = s.id;
        for (const SyntheticVisit* v : {&s.baseline, &s.followup}) {
            const std::filesystem::path dir = out_dir / "subjects" / s.id / v->id;
            VisitEntry ve;
            ve.id = v->id;
            for (const Volume& vol : v->volumes) {
                ve.sequences[vol.sequence_id] = dir / (vol.sequence_id + ".vvol");
                write_volume(vol, ve.sequences[vol.sequence_id]);
            }
            ve.mask = dir / "mask.vvol";
            write_mask(v->mask, ve.mask);
            Volume truth(spec.dims, 1, spec.spacing, "truth");
            for (std::size_t j = 0; j < v->truth.size(); ++j) truth.data[j] = v->truth[j];
            write_volume(truth, dir / "truth.vvol");
            const ArmSpec& arm = spec.arms[std::size_t(s.arm)];
            ve.labels["arm"] = arm.name;
            ve.labels["dose"] = std::int64_t(std::llround(arm.dose));
            for (std::size_t g = 0; g < spec.grades.size(); ++g) ve.labels[spec.grades[g].name] = v->grades[g];
            entry.visits.push_back(std::move(ve));
        }
        std::vector<std::string> row{s.id, spec.arms[std::size_t(s.arm)].name};
        for (double p : s.baseline.proportions) row.push_back(format_number(p));
        for (double p : s.followup.proportions) row.push_back(format_number(p));
        truth_rows[i] = std::move(row);
    });
    save_manifest(m, out_dir / "manifest.json");
    Table t;
    t.header = {"subject", "arm"};
    for (const char* v : {"v0", "v1"})
        for (int c = 0; c < spec.k_true; ++c) t.header.push_back(std::string(v) + ":" + std::to_string(c));
    for (auto& r : truth_rows) t.add_row(std::move(r));
    write_table(t, out_dir / "truth_proportions.csv");
    return m;
}

ClusterMap ground_truth_map(const SyntheticVisit& visit, Spacing spacing, int stride) {
    if (stride < 1) fail(Errc::InvalidArgument, "stride must be positive");
    ClusterMap map;
    map.sequence_id = "truth";
    map.stride = stride;
    map.spacing = spacing;
    const Dims d = visit.mask.dims;
    std::int16_t max_label = -1;
    for (std::int16_t t : visit.truth) max_label = std::max(max_label, t);
    map.k = std::max<int>(int(visit.proportions.size()), max_label + 1);
    for (int z = 0; z < int(d.nz); ++z)
        for (int y = 0; y < int(d.ny); y += stride)
            for (int x = 0; x < int(d.nx); x += stride) {
                const std::int16_t t = visit.truth[visit.mask.index(x, y, z)];
                if (t < 0) continue;
                map.positions.push_back({x, y, z});
                map.labels.push_back(t);
            }
    return map;
}

LabeledPatches texture_patches(const SequenceSpec& seq, int per_class, int size, std::uint64_t seed) {
    LabeledPatches out;
    const Dims d{std::uint32_t(4 * size), std::uint32_t(4 * size), 4};
    for (std::size_t c = 0; c < seq.classes.size(); ++c) {
        const ClassTexture& tex = seq.classes[c];
        Rng rng(seed, "texture-patches", c);
        Volume vol(d, std::uint32_t(seq.echoes), Spacing{}, seq.id);
        int drawn = 0;
        while (drawn < per_class) {
            // A fresh field every 32 patches keeps the patches from overlapping too much.
            const std::vector<float> field = gaussian_field(d, tex.correlation, rng);
            for (std::size_t i = 0; i < d.voxels(); ++i)
                for (int e = 0; e < seq.echoes; ++e)
                    vol.data[std::size_t(e) * d.voxels() + i] = static_cast<float>(tex.mean[std::size_t(e)] + tex.sd * field[i]);
            for (int j = 0; j < 32 && drawn < per_class; ++j, ++drawn) {
                const int x = size / 2 + int(rng.below(std::uint64_t(d.nx - size + 1)));
                const int y = size / 2 + int(rng.below(std::uint64_t(d.ny - size + 1)));
                const int z = int(rng.below(d.nz));
                out.patches.push_back(extract_patch(vol, {x, y, z}, size));
                out.labels.push_back(int(c));
            }
        }
    }
    // Standardize each channel over the whole set.
    const int ch = seq.echoes;
    const std::size_t plane = std::size_t(size) * size;
    for (int e = 0; e < ch; ++e) {
        double sum = 0.0, sq = 0.0, n = 0.0;
        for (const Patch& p : out.patches)
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = p.data[std::size_t(e) * plane + i];
                sum += v;
                sq += v * v;
                n += 1.0;
            }
        const double mean = sum / n, sd = std::sqrt(std::max(1e-12, sq / n - mean * mean));
        for (Patch& p : out.patches)
            for (std::size_t i = 0; i < plane; ++i) {
                float& v = p.data[std::size_t(e) * plane + i];
                v = static_cast<float>((v - mean) / sd);
            }
    }
    return out;
}

}  // namespace tvoc
