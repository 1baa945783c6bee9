#include "tvoc/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include <json.hpp>

#include "tvoc/dcn.hpp"
#include "tvoc/error.hpp"
#include "tvoc/longitudinal.hpp"
#include "tvoc/manifest.hpp"
#include "tvoc/nn.hpp"
#include "tvoc/patch.hpp"
#include "tvoc/registration.hpp"
#include "tvoc/signature.hpp"
#include "tvoc/synth.hpp"
#include "tvoc/table.hpp"

namespace tvoc {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "tvoc 0.1.0";

struct Paths {
    fs::path out;
    fs::path patches(const std::string& seq) const { return out / "patches" / (seq + ".vpat"); }
    fs::path pretrained(const std::string& seq) const { return out / "models" / (seq + ".pretrained.dcnw"); }
    fs::path model(const std::string& seq) const { return out / "models" / (seq + ".dcnw"); }
    fs::path codebook(const std::string& seq) const { return out / "models" / (seq + ".dcnc"); }
    fs::path map(const std::string& subject, const std::string& visit, const std::string& seq) const {
        return out / "maps" / subject / visit / (seq + ".csv");
    }
    fs::path csv(const std::string& name) const { return out / (name + ".csv"); }
};

void write_meta(const RunConfig& cfg, const std::string& stage, const std::vector<fs::path>& outputs) {
    json j;
    j["stage"] = stage;
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.seed;
    j["version"] = kVersion;
    std::vector<std::string> rel;
    for (const fs::path& p : outputs) rel.push_back(fs::relative(p, cfg.out_dir).generic_string());
    j["outputs"] = rel;
    fs::create_directories(cfg.out_dir);
    std::ofstream(meta_path(cfg, stage)) << j.dump(2) << "\n";
    std::ofstream(cfg.out_dir / "config.txt") << to_text(cfg);
}

void require_stage(const RunConfig& cfg, const std::string& stage, const std::string& by) {
    if (!fs::exists(meta_path(cfg, stage)))
        fail(Errc::MissingArtifact, "'" + by + "' needs the output of '" + stage + "'; run `tvoc " + stage + "` first (no " +
                                        meta_path(cfg, stage).string() + ")");
}

void require_file(const fs::path& p, const std::string& stage) {
    if (!fs::exists(p)) fail(Errc::MissingArtifact, "missing " + p.string() + "; rerun `tvoc " + stage + "`");
}

Manifest manifest_for(const RunConfig& cfg, const std::string& by) {
    const fs::path m = cfg.manifest_path();
    if (!fs::exists(m)) {
        if (cfg.manifest.empty()) require_stage(cfg, "synth", by);
        fail(Errc::MissingArtifact, "manifest not found: " + m.string());
    }
    return load_manifest(m);
}

std::map<std::string, RigidTransform> identity_transforms(const RunConfig& cfg) {
    std::map<std::string, RigidTransform> t;
    for (const std::string& s : cfg.sequences)
        if (s != cfg.reference) t[s] = RigidTransform::identity();
    return t;
}

/// The volume a model sequence is trained on and encoded from: one sequence, or the
/// image-fused stack of all of them.
Volume model_volume(const RunConfig& cfg, const LoadedVisit& v, const std::string& seq) {
    if (seq != "if") {
        const auto it = v.sequences.find(seq);
        if (it == v.sequences.end()) fail(Errc::MissingSequence, "visit " + v.id + " has no sequence '" + seq + "'");
        return it->second;
    }
    return image_fuse(v.sequences, cfg.sequences, cfg.reference, identity_transforms(cfg));
}

std::vector<std::pair<const SubjectEntry*, const VisitEntry*>> all_visits(const Manifest& m) {
    std::vector<std::pair<const SubjectEntry*, const VisitEntry*>> out;
    for (const SubjectEntry& s : m.subjects)
        for (const VisitEntry& v : s.visits) out.emplace_back(&s, &v);
    return out;
}

TrainConfig train_config(const RunConfig& cfg, const std::string& seq, int epochs) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = cfg.dcn_batch;
    t.lr = cfg.dcn_lr;
    t.momentum = cfg.dcn_momentum;
    t.lambda = cfg.dcn_lambda;
    t.k = cfg.k_for(seq);
    t.kmeans_restarts = cfg.dcn_kmeans_restarts;
    t.holdout_fraction = cfg.dcn_holdout;
    t.seed = substream(cfg.seed, "dcn:" + seq);
    return t;
}

Arch model_arch(const RunConfig& cfg, int channels) {
    Arch a;
    a.channels = channels;
    a.input_size = cfg.patch_size;
    return a;
}

void append_epochs(Table& t, const std::string& seq, const std::string& phase, const TrainReport& r) {
    for (const EpochStats& e : r.epochs)
        t.add_row({seq, phase, std::to_string(e.epoch), format_number(e.train_loss), format_number(e.heldout_recon),
                   format_number(e.heldout_cluster), format_number(e.heldout_loss), std::to_string(e.reinitialized)});
}

Table epoch_table() {
    Table t;
    t.header = {"seq", "phase", "epoch", "train_loss", "heldout_recon", "heldout_cluster", "heldout_loss", "reinitialized"};
    return t;
}

// --- stages ---------------------------------------------------------------

void stage_synth(const RunConfig& cfg, std::ostream& log) {
    CohortSpec spec = default_cohort_spec(cfg.synth_arms, cfg.synth_subjects_per_arm, cfg.synth_effect);
    spec.dims = {std::uint32_t(cfg.synth_nx), std::uint32_t(cfg.synth_ny), std::uint32_t(cfg.synth_nz)};
    spec.regions = cfg.synth_regions;
    spec.region_z_weight = cfg.synth_region_z_weight;
    spec.motion_mm = cfg.synth_motion_mm;
    spec.motion_deg = cfg.synth_motion_deg;
    spec.seed = substream(cfg.seed, "synth");
    const fs::path dir = cfg.manifest_path().parent_path();
    const Manifest m = generate_cohort(spec, dir);
    log << "synth: " << m.subjects.size() << " subjects written to " << dir.string() << "\n";
    write_meta(cfg, "synth", {cfg.manifest_path(), dir / "truth_proportions.csv"});
}

void stage_sample(const RunConfig& cfg, std::ostream& log) {
    const Manifest m = manifest_for(cfg, "sample");
    const auto visits = all_visits(m);
    if (visits.empty()) fail(Errc::InvalidArgument, "manifest lists no visits");
    const std::size_t per_volume = std::size_t(cfg.patch_count) / visits.size();
    if (per_volume == 0) fail(Errc::ConfigInvalid, "patch.count is smaller than the number of volumes");
    std::vector<fs::path> outputs;
    for (const std::string& seq : cfg.model_sequences()) {
        PatchSet all;
        all.seed = substream(cfg.seed, "sample");
        all.size = cfg.patch_size;
        // Each volume draws from its own named stream, so sampling one volume at a time
        // gives the same set as sampling all at once without holding them in memory.
        for (const auto& [subject, visit] : visits) {
            const LoadedVisit lv = load_visit(*visit);
            const Volume vol = model_volume(cfg, lv, seq);
            const SamplerInput in{&vol, &lv.mask, subject->id, visit->id};
            PatchSet one = sample_training_patches(std::span(&in, 1), per_volume, cfg.patch_size, substream(cfg.seed, "sample"));
            all.channels = one.channels;
            for (Patch& p : one.patches) all.patches.push_back(std::move(p));
            all.per_volume.insert(all.per_volume.end(), one.per_volume.begin(), one.per_volume.end());
        }
        const fs::path out = Paths{cfg.out_dir}.patches(seq);
        fs::create_directories(out.parent_path());
        save_patch_set(all, out);
        outputs.push_back(out);
        log << "sample: " << seq << ": " << all.patches.size() << " patches\n";
    }
    write_meta(cfg, "sample", outputs);
}

void stage_pretrain(const RunConfig& cfg, std::ostream& log) {
    require_stage(cfg, "sample", "pretrain");
    const Paths paths{cfg.out_dir};
    Table epochs = epoch_table();
    std::vector<fs::path> outputs;
    for (const std::string& seq : cfg.model_sequences()) {
        require_file(paths.patches(seq), "sample");
        const PatchSet set = load_patch_set(paths.patches(seq));
        Model model = Model::initialized(model_arch(cfg, set.channels), substream(cfg.seed, "model-init:" + seq));
        TrainConfig tc = train_config(cfg, seq, cfg.dcn_pretrain_epochs);
        tc.on_epoch = [&](const EpochStats& e) {
            log << "pretrain: " << seq << " epoch " << e.epoch << " loss " << format_number(e.train_loss) << "\n";
        };
        const TrainReport r = pretrain(model, set.patches, tc);
        append_epochs(epochs, seq, "pretrain", r);
        fs::create_directories(paths.pretrained(seq).parent_path());
        save_model(model, paths.pretrained(seq));
        outputs.push_back(paths.pretrained(seq));
    }
    write_table(epochs, paths.csv("pretrain_log"));
    outputs.push_back(paths.csv("pretrain_log"));
    write_meta(cfg, "pretrain", outputs);
}

void stage_train(const RunConfig& cfg, std::ostream& log) {
    require_stage(cfg, "pretrain", "train");
    const Paths paths{cfg.out_dir};
    Table epochs = epoch_table();
    std::vector<fs::path> outputs;
    for (const std::string& seq : cfg.model_sequences()) {
        require_file(paths.pretrained(seq), "pretrain");
        const PatchSet set = load_patch_set(paths.patches(seq));
        Model model = load_model(paths.pretrained(seq));
        TrainConfig tc = train_config(cfg, seq, cfg.dcn_epochs);
        tc.on_epoch = [&](const EpochStats& e) {
            log << "train: " << seq << " epoch " << e.epoch << " loss " << format_number(e.train_loss) << "\n";
        };
        const DcnResult r = train_dcn(model, set.patches, tc);
        append_epochs(epochs, seq, "dcn", r.report);
        save_model(model, paths.model(seq));
        save_codebook(r.codebook, paths.codebook(seq));
        outputs.push_back(paths.model(seq));
        outputs.push_back(paths.codebook(seq));
    }
    write_table(epochs, paths.csv("train_log"));
    outputs.push_back(paths.csv("train_log"));
    write_meta(cfg, "train", outputs);
}

void stage_encode(const RunConfig& cfg, std::ostream& log) {
    require_stage(cfg, "train", "encode");
    const Manifest m = manifest_for(cfg, "encode");
    const Paths paths{cfg.out_dir};
    std::map<std::string, Model> models;
    std::map<std::string, Codebook> codebooks;
    for (const std::string& seq : cfg.model_sequences()) {
        require_file(paths.model(seq), "train");
        require_file(paths.codebook(seq), "train");
        models[seq] = load_model(paths.model(seq));
        codebooks[seq] = load_codebook(paths.codebook(seq));
    }
    const std::vector<std::string> order = cfg.model_sequences();
    Table sigs;
    std::vector<fs::path> outputs;
    for (const auto& [subject, visit] : all_visits(m)) {
        const LoadedVisit lv = load_visit(*visit);
        std::vector<Signature> parts;
        for (const std::string& seq : order) {
            const Volume vol = model_volume(cfg, lv, seq);
            ClusterMap map = cluster_map(vol, lv.mask, models[seq], codebooks[seq], cfg.patch_stride);
            map.sequence_id = seq;
            const fs::path mp = paths.map(subject->id, visit->id, seq);
            fs::create_directories(mp.parent_path());
            write_table(cluster_map_table(map), mp);
            outputs.push_back(mp);
            parts.push_back(signature(map));
        }
        const Signature fused = fuse_signatures(parts, order);
        if (sigs.header.empty()) {
            sigs.header = {"subject", "visit"};
            for (const std::string& c : signature_columns(fused.layout)) sigs.header.push_back(c);
        }
        std::vector<std::string> row{subject->id, visit->id};
        for (double v : fused.values) row.push_back(format_number(v));
        sigs.add_row(std::move(row));
    }
    write_table(sigs, paths.csv("signatures"));
    outputs.push_back(paths.csv("signatures"));
    log << "encode: " << sigs.rows.size() << " signatures of dimension " << sigs.header.size() - 2 << "\n";
    write_meta(cfg, "encode", outputs);
}

struct SignatureRows {
    std::vector<std::string> columns;
    std::map<std::pair<std::string, std::string>, std::vector<double>> values;  // (subject, visit) -> signature
};

SignatureRows load_signatures(const RunConfig& cfg, const std::string& by) {
    require_stage(cfg, "encode", by);
    const fs::path p = Paths{cfg.out_dir}.csv("signatures");
    require_file(p, "encode");
    const Table t = read_table(p);
    SignatureRows out;
    out.columns.assign(t.header.begin() + 2, t.header.end());
    for (const auto& row : t.rows) {
        std::vector<double> v;
        for (std::size_t c = 2; c < row.size(); ++c) v.push_back(parse_number(row[c]));
        out.values[{row[0], row[1]}] = std::move(v);
    }
    return out;
}

std::vector<SignatureSpan> layout_of(const std::vector<std::string>& columns) {
    std::vector<SignatureSpan> layout;
    for (const std::string& c : columns) {
        const std::string seq = c.substr(0, c.rfind(':'));
        if (layout.empty() || layout.back().sequence_id != seq) layout.push_back({seq, 0});
        ++layout.back().k;
    }
    return layout;
}

/// Subjects with a baseline signature, in manifest order.
std::vector<const SubjectEntry*> baseline_subjects(const Manifest& m, const SignatureRows& sigs, const RunConfig& cfg) {
    std::vector<const SubjectEntry*> out;
    for (const SubjectEntry& s : m.subjects)
        if (s.visit(cfg.baseline_visit) && sigs.values.contains({s.id, cfg.baseline_visit})) out.push_back(&s);
    return out;
}

ForestConfig forest_config(const RunConfig& cfg) {
    ForestConfig f;
    f.n_trees = cfg.trees;
    return f;
}

void stage_predict(const RunConfig& cfg, std::ostream& log) {
    const SignatureRows sigs = load_signatures(cfg, "predict");
    const Manifest m = manifest_for(cfg, "predict");
    const auto subjects = baseline_subjects(m, sigs, cfg);
    Table metrics;
    metrics.header = {"grade", "n", "accuracy", "ppv", "npv", "sensitivity", "specificity", "tp", "fp", "tn", "fn"};
    Table per_subject;
    per_subject.header = {"grade", "subject", "truth", "predicted", "p_high"};
    for (const std::string& grade : cfg.grades) {
        std::vector<const SubjectEntry*> rows;
        std::vector<std::int64_t> g;
        for (const SubjectEntry* s : subjects)
            if (const auto v = grade_label(s->visit(cfg.baseline_visit)->labels, grade)) {
                rows.push_back(s);
                g.push_back(*v);
            }
        if (rows.empty()) {
            log << "predict: no subject carries grade '" << grade << "', skipped\n";
            continue;
        }
        Matrix x(rows.size(), sigs.columns.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& v = sigs.values.at({rows[i]->id, cfg.baseline_visit});
            std::copy(v.begin(), v.end(), x.row(i));
        }
        GradeConfig gc;
        gc.folds = cfg.folds;
        gc.low_grade_max = cfg.low_grade_max;
        gc.forest = forest_config(cfg);
        gc.seed = substream(cfg.seed, "predict:" + grade);
        const GradeResult r = grade_prediction(x, g, gc);
        const ClassificationMetrics& c = r.metrics;
        metrics.add_row({grade, std::to_string(rows.size()), format_number(c.accuracy), format_number(c.ppv),
                         format_number(c.npv), format_number(c.sensitivity), format_number(c.specificity),
                         std::to_string(c.tp), std::to_string(c.fp), std::to_string(c.tn), std::to_string(c.fn)});
        for (std::size_t i = 0; i < rows.size(); ++i)
            per_subject.add_row({grade, rows[i]->id, std::to_string(r.truth[i]), std::to_string(r.predicted[i]),
                                 format_number(r.p_high[i])});
        log << "predict: " << grade << " accuracy " << format_number(c.accuracy) << "\n";
    }
    const Paths paths{cfg.out_dir};
    write_table(metrics, paths.csv("predict"));
    write_table(per_subject, paths.csv("predict_subjects"));
    write_meta(cfg, "predict", {paths.csv("predict"), paths.csv("predict_subjects")});
}

void stage_respond(const RunConfig& cfg, std::ostream& log) {
    const SignatureRows sigs = load_signatures(cfg, "respond");
    const Manifest m = manifest_for(cfg, "respond");
    const auto layout = layout_of(sigs.columns);
    std::vector<DifferenceSignature> diffs;
    for (const SubjectEntry& s : m.subjects) {
        const VisitEntry* v0 = s.visit(cfg.baseline_visit);
        if (!v0 || !s.visit(cfg.followup_visit)) continue;
        const auto a = sigs.values.find({s.id, cfg.baseline_visit});
        const auto b = sigs.values.find({s.id, cfg.followup_visit});
        if (a == sigs.values.end() || b == sigs.values.end()) continue;
        const auto arm = grade_label(v0->labels, cfg.arm_label);
        if (!arm) fail(Errc::InvalidArgument, "subject " + s.id + " has no numeric label '" + cfg.arm_label + "'");
        DifferenceSignature d = difference_signature(Signature{a->second, layout}, Signature{b->second, layout});
        d.subject_id = s.id;
        d.arm = double(*arm);
        diffs.push_back(std::move(d));
    }
    ResponseConfig rc;
    rc.folds = cfg.folds;
    rc.forest = forest_config(cfg);
    rc.seed = substream(cfg.seed, "respond");
    const ResponseResult r = response_analysis(diffs, rc);
    Table preds;
    preds.header = {"subject", "arm", "predicted", "fold"};
    for (std::size_t i = 0; i < r.subjects.size(); ++i)
        preds.add_row({r.subjects[i], format_number(r.arms[i]), format_number(r.predicted[i]), std::to_string(r.fold[i])});
    const Paths paths{cfg.out_dir};
    write_table(response_table(r), paths.csv("response"));
    write_table(preds, paths.csv("response_subjects"));
    for (std::size_t i = 0; i < r.pairs.size(); ++i)
        log << "respond: " << r.pair_names[i] << " p_corr " << format_number(r.pairs[i].p_corrected.value_or(r.pairs[i].p)) << "\n";
    write_meta(cfg, "respond", {paths.csv("response"), paths.csv("response_subjects")});
}

void stage_transitions(const RunConfig& cfg, std::ostream& log) {
    require_stage(cfg, "encode", "transitions");
    const Manifest m = manifest_for(cfg, "transitions");
    const Paths paths{cfg.out_dir};
    const std::vector<std::string> seqs = cfg.model_sequences();
    std::map<std::string, int> ks;
    for (const std::string& seq : seqs) ks[seq] = load_codebook(paths.codebook(seq)).k;

    struct Entry {
        const SubjectEntry* subject;
        std::int64_t arm;
        RigidTransform transform;
        double residual;
        Spacing spacing;
    };
    std::vector<Entry> entries;
    for (const SubjectEntry& s : m.subjects) {
        const VisitEntry* v0 = s.visit(cfg.baseline_visit);
        const VisitEntry* v1 = s.visit(cfg.followup_visit);
        if (!v0 || !v1) continue;
        const auto arm = grade_label(v0->labels, cfg.arm_label);
        if (!arm) fail(Errc::InvalidArgument, "subject " + s.id + " has no numeric label '" + cfg.arm_label + "'");
        Entry e{&s, *arm, RigidTransform::identity(), 0.0, Spacing{}};
        if (!cfg.register_visits) e.spacing = read_mask(v0->mask).spacing;
        else {
            const LoadedVisit a = load_visit(*v0), b = load_visit(*v1);
            const auto fa = a.sequences.find(cfg.reference), fb = b.sequences.find(cfg.reference);
            if (fa == a.sequences.end() || fb == b.sequences.end())
                fail(Errc::MissingSequence, "subject " + s.id + " lacks the reference sequence '" + cfg.reference + "'");
            // Mask registration is blind to the tissue changes the transitions are meant to measure.
            const bool on_mask = cfg.register_on == "mask";
            const Volume fixed = on_mask ? volume_from_mask(a.mask) : fa->second;
            const Volume moving = on_mask ? volume_from_mask(b.mask) : fb->second;
            const RegistrationResult r = register_rigid(fixed, a.mask, moving, b.mask, RegistrationOptions{});
            e.transform = r.transform;
            e.residual = r.residual;
            e.spacing = a.mask.spacing;
        }
        entries.push_back(e);
    }
    Table transforms;
    transforms.header = {"subject", "rx", "ry", "rz", "tx", "ty", "tz", "residual"};
    for (const Entry& e : entries) {
        const RigidTransform& t = e.transform;
        transforms.add_row({e.subject->id, format_number(t.angles[0]), format_number(t.angles[1]), format_number(t.angles[2]),
                            format_number(t.translation[0]), format_number(t.translation[1]),
                            format_number(t.translation[2]), format_number(e.residual)});
    }

    std::set<std::int64_t> arms;
    for (const Entry& e : entries) arms.insert(e.arm);
    if (arms.size() < 2) fail(Errc::InvalidArgument, "transition comparison needs at least two arms");
    const std::int64_t control = *arms.begin();

    Table matrices;
    matrices.header = {"subject", "arm", "seq", "i", "j", "count", "prob"};
    Table out;
    for (const std::string& seq : seqs) {
        std::map<std::int64_t, std::vector<TransitionMatrix>> by_arm;
        for (const Entry& e : entries) {
            const std::string id = e.subject->id;
            const fs::path p0 = paths.map(id, cfg.baseline_visit, seq), p1 = paths.map(id, cfg.followup_visit, seq);
            require_file(p0, "encode");
            require_file(p1, "encode");
            const Spacing sp = e.spacing;
            const ClusterMap m0 = cluster_map_from_table(read_table(p0), ks[seq], seq, cfg.patch_stride, sp);
            const ClusterMap m1 = cluster_map_from_table(read_table(p1), ks[seq], seq, cfg.patch_stride, sp);
            TransitionMatrix tm = transition_matrix(m0, m1, e.transform);
            tm.group = std::to_string(e.arm);
            for (int i = 0; i < tm.k; ++i)
                for (int j = 0; j < tm.k; ++j)
                    matrices.add_row({id, std::to_string(e.arm), seq, std::to_string(i), std::to_string(j),
                                      format_number(tm.count(i, j)), format_number(tm.prob(i, j))});
            by_arm[e.arm].push_back(std::move(tm));
        }
        for (std::int64_t arm : arms) {
            if (arm == control) continue;
            const TransitionComparison c = compare_transitions(by_arm[control], by_arm[arm], cfg.n_perm,
                                                               substream(cfg.seed, "transitions:" + seq, std::uint64_t(arm)));
            Table t = transition_table(seq, c);
            if (out.header.empty()) {
                out.header = {"comparison"};
                out.header.insert(out.header.end(), t.header.begin(), t.header.end());
            }
            const std::string name = std::to_string(control) + " vs " + std::to_string(arm);
            int significant = 0;
            for (auto& row : t.rows) {
                row.insert(row.begin(), name);
                out.add_row(std::move(row));
            }
            for (const CellComparison& cell : c.cells)
                if (cell.test.p_corrected.value_or(cell.test.p) < cfg.alpha) ++significant;
            log << "transitions: " << seq << " " << name << ": " << significant << " cells below alpha after correction\n";
        }
    }
    write_table(transforms, paths.csv("transforms"));
    write_table(matrices, paths.csv("transition_matrices"));
    write_table(out, paths.csv("transitions"));
    write_meta(cfg, "transitions", {paths.csv("transforms"), paths.csv("transition_matrices"), paths.csv("transitions")});
}

void stage_phenotypes(const RunConfig& cfg, std::ostream& log) {
    const SignatureRows sigs = load_signatures(cfg, "phenotypes");
    const Manifest m = manifest_for(cfg, "phenotypes");
    const auto subjects = baseline_subjects(m, sigs, cfg);
    if (subjects.size() < 2) fail(Errc::FewerThanTwoPoints, "phenotyping needs at least two subjects");
    Matrix x(subjects.size(), sigs.columns.size());
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto& v = sigs.values.at({subjects[i]->id, cfg.baseline_visit});
        std::copy(v.begin(), v.end(), x.row(i));
    }
    const int p = std::min<int>(cfg.phenotypes, int(subjects.size()));
    const PhenotypeAssignment a = discover_phenotypes(x, p);
    Table assign;
    assign.header = {"subject", "phenotype"};
    for (std::size_t i = 0; i < subjects.size(); ++i) assign.add_row({subjects[i]->id, std::to_string(a.labels[i])});
    Table assoc;
    for (const std::string& grade : cfg.grades) {
        std::vector<std::optional<std::int64_t>> g;
        for (const SubjectEntry* s : subjects) g.push_back(grade_label(s->visit(cfg.baseline_visit)->labels, grade));
        Table t = association_table(grade, phenotype_associations(a, g, cfg.alpha));
        if (assoc.header.empty()) assoc.header = t.header;
        for (auto& row : t.rows) assoc.add_row(std::move(row));
    }
    const Paths paths{cfg.out_dir};
    write_table(assign, paths.csv("phenotypes"));
    write_table(assoc, paths.csv("associations"));
    log << "phenotypes: " << subjects.size() << " subjects in " << p << " phenotypes\n";
    write_meta(cfg, "phenotypes", {paths.csv("phenotypes"), paths.csv("associations")});
}

void stage_gradcheck(const RunConfig& cfg, std::ostream& log) {
    Arch a;
    a.channels = 1;
    a.input_size = 4;
    a.feature_maps = {3, 2};
    a.latent = 3;
    const auto entries = gradient_check(a, substream(cfg.seed, "gradcheck"));
    Table t;
    t.header = {"block", "checked", "max_rel_error", "max_abs_error"};
    double worst = 0.0;
    for (const GradcheckEntry& e : entries) {
        t.add_row({e.block, std::to_string(e.checked), format_number(e.max_rel_error), format_number(e.max_abs_error)});
        worst = std::max(worst, e.max_rel_error);
    }
    const Paths paths{cfg.out_dir};
    fs::create_directories(cfg.out_dir);
    write_table(t, paths.csv("gradcheck"));
    log << "gradcheck: max relative error " << format_number(worst) << (worst <= 1e-4 ? " (ok)" : " (FAILED)") << "\n";
    write_meta(cfg, "gradcheck", {paths.csv("gradcheck")});
    if (!(worst <= 1e-4)) fail(Errc::DivergenceDetected, "analytic gradients disagree with finite differences");
}

void stage_report(const RunConfig& cfg, std::ostream& log) {
    const std::string hash = config_hash(cfg);
    std::vector<std::string> present;
    std::set<std::string> hashes;
    for (const std::string& stage : stage_names()) {
        if (stage == "report" || !fs::exists(meta_path(cfg, stage))) continue;
        std::ifstream in(meta_path(cfg, stage));
        const json j = json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.contains("config_hash"))
            fail(Errc::CorruptFile, "unreadable " + meta_path(cfg, stage).string());
        const std::string h = j["config_hash"].get<std::string>();
        hashes.insert(h);
        present.push_back(stage + " " + h);
    }
    if (present.empty()) fail(Errc::MissingArtifact, "no stage outputs in " + cfg.out_dir.string());
    if (hashes.size() > 1 || *hashes.begin() != hash) {
        std::string detail;
        for (const std::string& p : present) detail += "\n  " + p;
        fail(Errc::ConfigInvalid, "artifacts come from different configurations (current " + hash + "):" + detail);
    }
    std::ofstream out(cfg.out_dir / "report.txt");
    out << "config " << hash << "\n";
    out << "stages";
    for (const std::string& p : present) out << " " << p.substr(0, p.find(' '));
    out << "\n";
    const Paths paths{cfg.out_dir};
    auto dump = [&](const std::string& name) {
        if (!fs::exists(paths.csv(name))) return;
        out << "\n[" << name << "]\n" << to_csv(read_table(paths.csv(name)));
    };
    dump("predict");
    dump("response");
    dump("associations");
    log << "report: " << present.size() << " stages, config " << hash << "\n";
    write_meta(cfg, "report", {cfg.out_dir / "report.txt"});
}

}  // namespace

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"synth",   "sample",      "pretrain",   "train",     "encode", "predict",
                                                   "respond", "transitions", "phenotypes", "gradcheck", "report"};
    return names;
}

fs::path meta_path(const RunConfig& cfg, const std::string& stage) { return cfg.out_dir / (stage + ".meta.json"); }

void run_stage(const std::string& stage, const RunConfig& cfg, std::ostream& log) {
    validate(cfg);
    if (stage == "synth") stage_synth(cfg, log);
    else if (stage == "sample") stage_sample(cfg, log);
    else if (stage == "pretrain") stage_pretrain(cfg, log);
    else if (stage == "train") stage_train(cfg, log);
    else if (stage == "encode") stage_encode(cfg, log);
    else if (stage == "predict") stage_predict(cfg, log);
    else if (stage == "respond") stage_respond(cfg, log);
    else if (stage == "transitions") stage_transitions(cfg, log);
    else if (stage == "phenotypes") stage_phenotypes(cfg, log);
    else if (stage == "gradcheck") stage_gradcheck(cfg, log);
    else if (stage == "report") stage_report(cfg, log);
    else fail(Errc::InvalidArgument, "unknown stage '" + stage + "'");
}

void run_all(const RunConfig& cfg, std::ostream& log) {
    for (const std::string& stage : stage_names()) run_stage(stage, cfg, log);
}

}  // namespace tvoc
