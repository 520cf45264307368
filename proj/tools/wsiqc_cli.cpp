// wsiqc: whole-slide tile quality control.
//
// Subcommands: ingest, split, train-seg, eval-seg, crossval, train-grid,
// select-bases, stack, run, report.
// Exit codes: 0 ok, 1 usage error, 2 data error, 3 training divergence.

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wsiqc/cls/grid.hpp"
#include "wsiqc/core/config.hpp"
#include "wsiqc/core/manifest.hpp"
#include "wsiqc/data/split.hpp"
#include "wsiqc/data/synthetic.hpp"
#include "wsiqc/io/image_io.hpp"
#include "wsiqc/metrics/report.hpp"
#include "wsiqc/pipeline/report_io.hpp"
#include "wsiqc/seg/checkpoint.hpp"
#include "wsiqc/seg/train.hpp"
#include "wsiqc/stack/serialize.hpp"

namespace fs = std::filesystem;
using namespace wsiqc;

namespace {

const std::set<std::string> kRasterExts{".png", ".jpg", ".jpeg", ".tif", ".tiff"};

std::vector<std::size_t> parse_counts3(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    try {
        while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
    } catch (const std::exception&) {
        throw UsageError("--counts expects three integers, got '" + text + "'");
    }
    if (out.size() != 3)
        throw UsageError("--counts expects train,valid,test (e.g. 480,60,60)");
    return out;
}

std::vector<double> parse_doubles(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    try {
        while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    } catch (const std::exception&) {
        throw UsageError("expected a comma list of numbers, got '" + text + "'");
    }
    return out;
}

std::vector<int> parse_ints(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    try {
        while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    } catch (const std::exception&) {
        throw UsageError("expected a comma list of integers, got '" + text + "'");
    }
    return out;
}

std::vector<std::string> parse_names(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

// Loads the tile+mask pairs for the given ids (all mask-bearing entries
// when ids is empty).
std::vector<seg::TrainSample> load_seg_samples(const DatasetManifest& manifest,
                                               const std::vector<std::string>& ids,
                                               std::optional<ArtifactKind> kind_filter) {
    std::set<std::string> wanted(ids.begin(), ids.end());
    std::vector<seg::TrainSample> out;
    for (const auto& e : manifest.entries) {
        if (!e.mask_path) continue;
        if (kind_filter && e.artifact_kind != kind_filter) continue;
        if (!wanted.empty() && !wanted.count(e.tile_id)) continue;
        seg::TrainSample s;
        s.tile.id = e.tile_id;
        s.tile.image = load_image(manifest.resolve(e.image_path).string());
        s.mask.tile_id = e.tile_id;
        s.mask.mask = load_image(manifest.resolve(*e.mask_path).string(), /*as_mask=*/true);
        if (e.artifact_kind) s.mask.artifact_kind = *e.artifact_kind;
        if (s.mask.mask.h != s.tile.image.h || s.mask.mask.w != s.tile.image.w)
            throw DataError("tile " + e.tile_id + ": mask size differs from image");
        out.push_back(std::move(s));
    }
    if (out.empty()) throw DataError("no usable tile/mask pairs selected from manifest");
    return out;
}

std::vector<cls::LabeledImage> load_severity_samples(const DatasetManifest& manifest) {
    std::vector<cls::LabeledImage> out;
    for (const auto& e : manifest.entries) {
        if (!e.severity) continue;
        cls::LabeledImage li;
        li.image = load_image(manifest.resolve(e.image_path).string());
        li.label = static_cast<int>(*e.severity);
        li.id = e.tile_id;
        out.push_back(std::move(li));
    }
    if (out.empty()) throw DataError("manifest has no severity-labeled entries");
    return out;
}

// Deterministic class-balanced 70:30 split shared by train-grid and stack.
void grid_split(const std::vector<cls::LabeledImage>& all, double train_ratio,
                std::uint64_t seed, std::vector<cls::LabeledImage>& train,
                std::vector<cls::LabeledImage>& test) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < all.size(); ++i) by_class[all[i].label].push_back(i);
    std::size_t per_class = all.size();
    for (const auto& [label, idx] : by_class) per_class = std::min(per_class, idx.size());
    const auto train_per_class =
        static_cast<std::size_t>(std::lround(train_ratio * static_cast<double>(per_class)));
    for (auto& [label, idx] : by_class) {
        Rng rng(derive_seed(seed, "grid_split_" + std::to_string(label)));
        rng.shuffle(idx);
        for (std::size_t i = 0; i < per_class; ++i)
            (i < train_per_class ? train : test).push_back(all[idx[i]]);
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

cls::GridTrainParams grid_params_from(int epochs, int batch, double lr, std::int64_t seed,
                                      bool freeze) {
    cls::GridTrainParams p;
    p.epochs = epochs;
    p.batch_size = batch;
    p.learning_rate = lr;
    p.seed = static_cast<std::uint64_t>(seed);
    p.freeze_backbone = freeze;
    return p;
}

void register_pretrained_provider() {
    const char* dir = std::getenv("WSIQC_BACKBONE_DIR");
    if (!dir) return;
    const std::string root(dir);
    cls::backbone_weights_provider() = [root](const std::string& name)
        -> std::optional<std::string> {
        const fs::path p = fs::path(root) / (name + ".wsiqc");
        if (fs::exists(p)) return p.string();
        return std::nullopt;
    };
}

// ---- ingest -----------------------------------------------------------------

struct IngestArgs {
    std::string images_dir, masks_dir, kind, out_dir, manifest_path;
    bool severity_from_dirs = false;
    bool oversample = false;
    int synth_seg = 0, synth_severity = 0, side = 64;
    std::int64_t seed = 42;
};

int cmd_ingest(const IngestArgs& a) {
    const fs::path out_dir = a.out_dir;
    fs::create_directories(out_dir);
    fs::path manifest_path =
        a.manifest_path.empty() ? out_dir / "manifest.tsv" : fs::path(a.manifest_path);

    DatasetManifest manifest;
    manifest.root = fs::absolute(manifest_path).parent_path();

    if (a.synth_seg > 0) {
        const auto kind =
            a.kind.empty() ? ArtifactKind::tissue_fold : artifact_kind_from_string(a.kind);
        const auto written = write_synthetic_seg_dataset(
            out_dir, a.synth_seg, a.side, kind, static_cast<std::uint64_t>(a.seed));
        if (fs::absolute(written) != fs::absolute(manifest_path))
            fs::copy_file(written, manifest_path, fs::copy_options::overwrite_existing);
    } else if (a.synth_severity > 0) {
        const auto written = write_synthetic_severity_dataset(
            out_dir, a.synth_severity, a.side, static_cast<std::uint64_t>(a.seed));
        if (fs::absolute(written) != fs::absolute(manifest_path))
            fs::copy_file(written, manifest_path, fs::copy_options::overwrite_existing);
    } else {
        if (a.images_dir.empty())
            throw UsageError("ingest needs --images (or --synth-seg/--synth-severity)");
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(a.images_dir)) {
            if (!e.is_regular_file()) continue;
            std::string ext = e.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
            if (!kRasterExts.count(ext)) continue;
            const auto stem = e.path().stem().string();
            if (stem.size() > 5 && stem.substr(stem.size() - 5) == "_mask") continue;
            files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("no raster images under " + a.images_dir);

        for (const auto& f : files) {
            ManifestEntry e;
            e.tile_id = f.stem().string();
            e.image_path = fs::relative(fs::absolute(f), manifest.root).string();
            if (!a.masks_dir.empty()) {
                for (const auto& ext : kRasterExts) {
                    for (const auto& candidate :
                         {fs::path(a.masks_dir) / (f.stem().string() + ext),
                          fs::path(a.masks_dir) / (f.stem().string() + "_mask" + ext),
                          f.parent_path() / (f.stem().string() + "_mask" + ext)}) {
                        if (fs::exists(candidate)) {
                            e.mask_path =
                                fs::relative(fs::absolute(candidate), manifest.root).string();
                            break;
                        }
                    }
                    if (e.mask_path) break;
                }
            }
            if (a.severity_from_dirs) {
                const std::string parent = f.parent_path().filename().string();
                if (parent == "low" || parent == "mid" || parent == "high") {
                    e.severity = severity_from_string(parent);
                    e.tile_id = parent + "_" + e.tile_id;
                }
            }
            if (!a.kind.empty()) e.artifact_kind = artifact_kind_from_string(a.kind);
            manifest.entries.push_back(std::move(e));
        }

        if (a.oversample) {
            // replicate minority severity classes up to the majority count
            std::map<SeverityLabel, std::vector<std::size_t>> by_label;
            for (std::size_t i = 0; i < manifest.entries.size(); ++i)
                if (manifest.entries[i].severity)
                    by_label[*manifest.entries[i].severity].push_back(i);
            std::size_t target = 0;
            for (const auto& [label, idx] : by_label) target = std::max(target, idx.size());
            for (auto& [label, idx] : by_label) {
                std::size_t next = 0, dup = 0;
                while (idx.size() + dup < target) {
                    ManifestEntry copy = manifest.entries[idx[next % idx.size()]];
                    copy.tile_id += "~dup" + std::to_string(dup++);
                    manifest.entries.push_back(std::move(copy));
                    ++next;
                }
            }
        }
        save_manifest(manifest, manifest_path.string());
    }

    const auto loaded = load_manifest(manifest_path.string());
    std::cout << "manifest: " << manifest_path.string() << "\n";
    std::cout << "entries: " << loaded.size() << "\n";
    for (const auto& [kind, n] : loaded.counts_by_kind())
        std::cout << "  kind " << to_string(kind) << ": " << n << "\n";
    for (const auto& [sev, n] : loaded.counts_by_severity())
        std::cout << "  severity " << to_string(sev) << ": " << n << "\n";
    return 0;
}

// ---- split ------------------------------------------------------------------

int cmd_split(const std::string& manifest_path, const std::string& counts_text,
              std::int64_t seed, const std::string& out_dir) {
    const auto manifest = load_manifest(manifest_path);
    const auto counts = parse_counts3(counts_text);
    const auto split =
        split_dataset(manifest, SplitCounts{counts[0], counts[1], counts[2]}, seed);
    fs::create_directories(out_dir);
    const auto path = fs::path(out_dir) / "split.tsv";
    save_split(split, path.string());
    std::cout << "split: " << path.string() << " (train " << split.train_ids.size()
              << ", valid " << split.valid_ids.size() << ", test " << split.test_ids.size()
              << ")\n";
    return 0;
}

// ---- train-seg --------------------------------------------------------------

int cmd_train_seg(const std::string& manifest_path, const std::string& split_path,
                  const std::string& config_path, const std::string& kind,
                  bool augment_flag, std::int64_t seed_override,
                  const std::string& out_dir) {
    RunConfig cfg = load_config(config_path);
    if (seed_override >= 0) cfg.seed = seed_override;
    {
        const auto violations = validate_config(cfg);
        if (!violations.empty()) throw DataError("config invalid: " + violations.front());
    }
    const auto manifest = load_manifest(manifest_path);
    std::optional<ArtifactKind> kind_filter;
    if (!kind.empty()) kind_filter = artifact_kind_from_string(kind);

    std::vector<std::string> train_ids, valid_ids;
    if (!split_path.empty()) {
        const auto split = load_split(split_path);
        train_ids = split.train_ids;
        valid_ids = split.valid_ids;
    }
    const auto train = load_seg_samples(manifest, train_ids, kind_filter);
    std::vector<seg::TrainSample> valid;
    if (!valid_ids.empty()) valid = load_seg_samples(manifest, valid_ids, kind_filter);

    const auto& shape = train.front().tile.image;
    auto model = seg::build_segmenter(cfg.model, shape.h, shape.w, cfg.width_scale,
                                 static_cast<std::uint64_t>(cfg.seed));
    std::optional<AugmentParams> aug;
    if (augment_flag) {
        // images were already rescaled to [0,1] at load time
        aug = AugmentParams{1.0, 0.3, 15.0, true};
    }
    const auto history = seg::train_segmenter(model, train, valid, cfg, aug);

    fs::create_directories(out_dir);
    seg::save_checkpoint(model, (fs::path(out_dir) / "model.wsiqc").string());
    write_text(fs::path(out_dir) / "history.csv", seg::history_to_csv(history));
    const auto& last = history.records.back();
    std::cout << "trained " << to_string(cfg.model) << ": epochs "
              << history.records.size() << " ("
              << (history.stop_reason == seg::StopReason::early_stop ? "early stop"
                                                                     : "max epochs")
              << "), final train loss " << last.train_loss << ", dice " << last.dice
              << "\n";
    std::cout << "checkpoint: " << (fs::path(out_dir) / "model.wsiqc").string() << "\n";
    return 0;
}

// ---- eval-seg ---------------------------------------------------------------

int cmd_eval_seg(const std::string& model_path, const std::string& manifest_path,
                 const std::string& split_path, const std::string& thresholds_text,
                 const std::string& kind, const std::string& out_dir) {
    auto model = seg::load_checkpoint(model_path);
    const auto manifest = load_manifest(manifest_path);
    std::optional<ArtifactKind> kind_filter;
    if (!kind.empty()) kind_filter = artifact_kind_from_string(kind);
    std::vector<std::string> ids;
    if (!split_path.empty()) ids = load_split(split_path).test_ids;
    auto samples = load_seg_samples(manifest, ids, kind_filter);
    for (auto& s : samples) {
        if (s.tile.image.h != model.input_h || s.tile.image.w != model.input_w)
            throw DataError("tile " + s.tile.id + " size does not match model input " +
                            std::to_string(model.input_h) + "x" +
                            std::to_string(model.input_w));
    }
    auto report = seg::evaluate_segmenter(model, samples, parse_doubles(thresholds_text));
    report.optimizer = "-";

    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "report.jsonl", report_to_json_line(report) + "\n");
    write_text(fs::path(out_dir) / "report.csv", reports_to_csv({report}));
    std::cout << "avg test IOU " << report.avg_test_iou;
    for (const auto& [thr, acc] : report.threshold_accuracies)
        std::cout << ", acc@" << thr << " " << acc;
    std::cout << ", dice " << report.dice << ", roc " << report.roc_auc << "\n";
    return 0;
}

// ---- crossval ---------------------------------------------------------------

int cmd_crossval(const std::string& manifest_path, const std::string& config_path, int k,
                 const std::string& optimizer_name, int valid_count,
                 const std::string& kind, std::int64_t seed_override,
                 const std::string& out_dir) {
    RunConfig cfg = load_config(config_path);
    if (seed_override >= 0) cfg.seed = seed_override;
    if (!optimizer_name.empty()) cfg.optimizer = optimizer_from_string(optimizer_name);
    const auto manifest = load_manifest(manifest_path);
    std::optional<ArtifactKind> kind_filter;
    if (!kind.empty()) kind_filter = artifact_kind_from_string(kind);

    const auto plan = make_kfold(manifest, k, cfg.seed);
    std::ostringstream csv;
    csv << "fold,train_folds,test_fold,avg_test_iou,test_acc_iou_0.90,test_acc_iou_0.85\n";
    double acc90_sum = 0.0;

    for (int i = 0; i < plan.k; ++i) {
        const auto rotation = fold_rotation(plan, i);
        // validation images carved from the training side of the rotation
        auto train_ids = rotation.train_ids;
        Rng rng(derive_seed(static_cast<std::uint64_t>(cfg.seed),
                            "crossval_valid_" + std::to_string(i)));
        rng.shuffle(train_ids);
        const std::size_t vcount =
            std::min<std::size_t>(static_cast<std::size_t>(valid_count),
                                  train_ids.size() / 5);
        const std::vector<std::string> valid_ids(train_ids.begin(),
                                                 train_ids.begin() + vcount);
        const std::vector<std::string> fit_ids(train_ids.begin() + vcount, train_ids.end());

        const auto train = load_seg_samples(manifest, fit_ids, kind_filter);
        const auto valid = load_seg_samples(manifest, valid_ids, kind_filter);
        const auto test = load_seg_samples(manifest, rotation.test_ids, kind_filter);

        const auto& shape = train.front().tile.image;
        auto model = seg::build_segmenter(cfg.model, shape.h, shape.w, cfg.width_scale,
                                     derive_seed(static_cast<std::uint64_t>(cfg.seed),
                                                 "fold" + std::to_string(i)));
        seg::train_segmenter(model, train, valid, cfg);
        const auto report = seg::evaluate_segmenter(model, test, {0.90, 0.85});

        std::string train_folds;
        for (int f = 0; f < plan.k; ++f)
            if (f != i) train_folds += FoldPlan::fold_label(f);
        csv << FoldPlan::fold_label(i) << ',' << train_folds << ','
            << FoldPlan::fold_label(i) << ',' << detail::fmt6(report.avg_test_iou) << ','
            << detail::fmt6(report.threshold_accuracies.at(0.90)) << ','
            << detail::fmt6(report.threshold_accuracies.at(0.85)) << '\n';
        acc90_sum += report.threshold_accuracies.at(0.90);
        std::cout << "fold " << FoldPlan::fold_label(i) << ": acc@0.90 "
                  << report.threshold_accuracies.at(0.90) << ", avg IOU "
                  << report.avg_test_iou << "\n";
    }
    csv << "average,,," << "," << detail::fmt6(acc90_sum / plan.k) << ",\n";
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "crossval.csv", csv.str());
    std::cout << "average acc@0.90: " << acc90_sum / plan.k << "\n";
    return 0;
}

// ---- train-grid -------------------------------------------------------------

int cmd_train_grid(const std::string& manifest_path, const std::string& backbones_text,
                   const std::string& optimizers_text, const std::string& losses_text,
                   int epochs, int batch, double lr, double train_ratio, bool pretrained,
                   bool freeze, bool freeze_set, std::int64_t seed,
                   const std::string& out_dir) {
    register_pretrained_provider();
    const auto manifest = load_manifest(manifest_path);
    const auto all = load_severity_samples(manifest);
    std::vector<cls::LabeledImage> train, test;
    grid_split(all, train_ratio, static_cast<std::uint64_t>(seed), train, test);

    cls::GridSpec grid;
    for (const auto& name :
         backbones_text.empty()
             ? [] {
                   std::vector<std::string> names;
                   for (const auto& s : cls::backbone_table()) names.push_back(s.name);
                   return names;
               }()
             : parse_names(backbones_text))
        grid.backbones.push_back(cls::backbone_spec(name, !pretrained));
    if (!optimizers_text.empty()) {
        grid.optimizers.clear();
        for (const auto& name : parse_names(optimizers_text))
            grid.optimizers.push_back(optimizer_from_string(name));
    }
    if (!losses_text.empty()) {
        grid.losses.clear();
        for (const auto& name : parse_names(losses_text))
            grid.losses.push_back(loss_from_string(name));
    }

    // substitutes start from random weights, so they fine-tune unless the
    // caller pins --freeze; pretrained backbones freeze by default
    const bool effective_freeze = freeze_set ? freeze : pretrained;
    const auto params = grid_params_from(epochs, batch, lr, seed, effective_freeze);
    const auto outcome = run_grid(train, test, grid, params, out_dir);
    std::cout << "grid results: " << outcome.results.size() << " combinations ("
              << outcome.skipped_existing << " resumed, " << outcome.failures.size()
              << " failed)\n";
    for (const auto& r : outcome.results)
        std::cout << "  " << r.key() << ": acc " << r.test_accuracy << ", val loss "
                  << r.val_loss << ", roc " << r.roc_score << "\n";
    for (const auto& f : outcome.failures) std::cout << "  FAILED " << f << "\n";
    std::cout << "csv: " << (fs::path(out_dir) / "grid_results.csv").string() << "\n";
    return 0;
}

// ---- select-bases -----------------------------------------------------------

int cmd_select_bases(const std::string& grid_csv, int k, const std::string& out_dir) {
    const auto results = cls::load_grid_csv(grid_csv);
    auto top = cls::select_base_models(results, static_cast<std::size_t>(k));
    // checkpoint entries resolve relative to their csv, so re-anchor them
    const fs::path grid_dir = fs::absolute(grid_csv).parent_path();
    for (auto& r : top)
        if (!r.checkpoint.empty() && !fs::path(r.checkpoint).is_absolute())
            r.checkpoint = (grid_dir / r.checkpoint).string();
    fs::create_directories(out_dir);
    const auto path = fs::path(out_dir) / "selected.csv";
    write_text(path, cls::grid_results_to_csv(top));
    for (std::size_t i = 0; i < top.size(); ++i)
        std::cout << "rank " << i + 1 << ": " << top[i].key() << " (acc "
                  << top[i].test_accuracy << ", val loss " << top[i].val_loss << ")\n";
    std::cout << "selected: " << path.string() << "\n";
    return 0;
}

// ---- stack ------------------------------------------------------------------

int cmd_stack(const std::string& selected_csv, const std::string& manifest_path,
              const std::string& combos_text, const std::string& kinds_text, int epochs,
              int batch, double lr, double train_ratio, bool paper_protocol, int folds,
              std::int64_t seed, const std::string& out_dir) {
    const auto selected = cls::load_grid_csv(selected_csv);
    if (selected.empty()) throw DataError("no base models in " + selected_csv);
    const fs::path grid_dir = fs::absolute(selected_csv).parent_path();

    const auto manifest = load_manifest(manifest_path);
    const auto all = load_severity_samples(manifest);
    std::vector<cls::LabeledImage> train, test;
    grid_split(all, train_ratio, static_cast<std::uint64_t>(seed), train, test);

    // keep loaded classifiers alive behind the BaseModel closures
    auto owned = std::make_shared<std::deque<std::shared_ptr<cls::ClassifierModel>>>();
    auto owning_base = [&](std::shared_ptr<cls::ClassifierModel> m, std::string id) {
        owned->push_back(m);
        return stack::BaseModel{
            std::move(id), [m](const std::vector<const cls::LabeledImage*>& s) {
                return cls::predict_probs(*m, s);
            }};
    };

    std::vector<stack::TrainableBase> bases;
    std::vector<std::string> checkpoint_files;
    for (const auto& r : selected) {
        const fs::path ckpt = grid_dir / r.checkpoint;
        auto model =
            std::make_shared<cls::ClassifierModel>(cls::load_classifier(ckpt.string()));
        checkpoint_files.push_back(ckpt.string());
        stack::TrainableBase base;
        base.id = r.key();
        base.full = owning_base(model, r.key());
        const auto spec = model->spec;
        const auto optimizer = r.optimizer;
        const auto loss = r.loss;
        base.retrain = [spec, optimizer, loss, epochs, batch, lr,
                        owning_base](const std::vector<cls::LabeledImage>& subset,
                                     std::uint64_t retrain_seed) mutable {
            auto m = std::make_shared<cls::ClassifierModel>(
                cls::build_classifier(spec, kSeverityClasses, retrain_seed));
            cls::train_classifier(*m, subset, {}, optimizer, loss, epochs, batch, lr,
                                  derive_seed(retrain_seed, "fold_train"),
                                  /*freeze_backbone=*/false);
            return owning_base(m, spec.name);
        };
        bases.push_back(std::move(base));
    }

    std::vector<int> combos = combos_text.empty()
                                  ? [&] {
                                        std::vector<int> out;
                                        for (int i = 2;
                                             i <= static_cast<int>(bases.size()); ++i)
                                            out.push_back(i);
                                        return out;
                                    }()
                                  : parse_ints(combos_text);
    std::vector<stack::MetaLearnerKind> kinds;
    if (kinds_text.empty() || kinds_text == "all")
        kinds.assign(stack::all_meta_kinds().begin(), stack::all_meta_kinds().end());
    else
        for (const auto& name : parse_names(kinds_text))
            kinds.push_back(stack::meta_kind_from_string(name));

    const auto table = stack::run_stacking_comparison(
        bases, train, test, combos, kinds, static_cast<std::uint64_t>(seed),
        paper_protocol, folds);

    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "stacking_comparison.csv",
               stack::comparison_to_csv(table));
    std::cout << stack::comparison_to_csv(table);

    // persist the best cell as a runnable severity-stack bundle
    const auto [br, bc] = table.best_cell();
    const int best_size = table.combo_sizes[br];
    stack::StackBundleInfo info;
    const fs::path bundle_dir = fs::path(out_dir) / "best_stack";
    fs::create_directories(bundle_dir);
    for (int i = 0; i < best_size; ++i) {
        info.base_ids.push_back(bases[static_cast<std::size_t>(i)].id);
        const fs::path src = checkpoint_files[static_cast<std::size_t>(i)];
        const std::string name = src.filename().string();
        fs::copy_file(src, bundle_dir / name, fs::copy_options::overwrite_existing);
        info.base_checkpoints.push_back(name);
    }
    stack::save_stack_bundle(info, table.metas[br][bc], bundle_dir);
    std::cout << "best: top_" << best_size << " with "
              << to_string(table.kinds[bc]) << " (acc " << table.accuracy[br][bc]
              << ") -> " << bundle_dir.string() << "\n";
    return 0;
}

// ---- run --------------------------------------------------------------------

int cmd_run(const std::string& image_path, const std::vector<std::string>& seg_model_args,
            const std::string& stack_dir, int tile_side, int stride, double trigger,
            const std::string& high_action, const std::string& mid_action,
            const std::string& low_action, const std::string& quality_scores_path,
            const std::string& out_dir) {
    const auto image = load_image(image_path);

    std::deque<seg::SegModel> models;
    std::map<ArtifactKind, seg::SegModel*> model_map;
    for (const auto& arg : seg_model_args) {
        const auto eq = arg.find('=');
        if (eq == std::string::npos)
            throw UsageError("--seg-model expects <kind>=<checkpoint>, got '" + arg + "'");
        const auto kind = artifact_kind_from_string(arg.substr(0, eq));
        models.push_back(seg::load_checkpoint(arg.substr(eq + 1)));
        model_map[kind] = &models.back();
    }
    if (model_map.empty()) throw UsageError("run needs at least one --seg-model");

    std::optional<pipeline::SeverityStack> stack_bundle;
    std::deque<std::shared_ptr<cls::ClassifierModel>> owned_classifiers;
    if (!stack_dir.empty()) {
        const auto info = stack::load_stack_bundle_info(stack_dir);
        pipeline::SeverityStack s;
        for (std::size_t i = 0; i < info.base_ids.size(); ++i) {
            auto m = std::make_shared<cls::ClassifierModel>(cls::load_classifier(
                (fs::path(stack_dir) / info.base_checkpoints[i]).string()));
            owned_classifiers.push_back(m);
            s.bases.push_back(stack::BaseModel{
                info.base_ids[i], [m](const std::vector<const cls::LabeledImage*>& x) {
                    return cls::predict_probs(*m, x);
                }});
        }
        s.meta = stack::load_meta_model((fs::path(stack_dir) / info.meta_file).string());
        stack_bundle = std::move(s);
    }

    pipeline::DecisionPolicy policy;
    policy.trigger_fraction = trigger;
    policy.high_action = pipeline::decision_from_string(high_action);
    policy.mid_action = pipeline::decision_from_string(mid_action);
    policy.low_action = pipeline::decision_from_string(low_action);

    pipeline::QualityScoreFn quality_fn = nullptr;
    std::map<std::string, double> scores;
    if (!quality_scores_path.empty()) {
        std::ifstream in(quality_scores_path);
        if (!in) throw DataError("cannot open quality scores: " + quality_scores_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw DataError("quality scores: expected <tile_id>\\t<score>");
            scores[line.substr(0, tab)] = std::stod(line.substr(tab + 1));
        }
        quality_fn = [scores](const TileSample& t) -> std::optional<double> {
            const auto it = scores.find(t.id);
            if (it == scores.end()) return std::nullopt;
            return it->second;
        };
    }

    const auto report = pipeline::run_pipeline(
        image, model_map, stack_bundle ? &*stack_bundle : nullptr, policy, tile_side,
        stride, quality_fn);
    pipeline::emit_report(report, out_dir);
    std::cout << pipeline::summary_csv(report.decision_counts, report.tiles.size());
    std::cout << "report: " << out_dir << "\n";
    return 0;
}

// ---- report -----------------------------------------------------------------

int cmd_report(const std::string& in_dir, const std::string& out_dir) {
    const auto verdicts = pipeline::load_verdicts(fs::path(in_dir) / "verdicts.jsonl");
    const auto summary = pipeline::summarize_verdicts(verdicts);
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "summary.csv", summary);
    std::cout << summary;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"whole-slide tile quality control: artifact segmentation, severity "
                 "grading, exclusion decisions"};
    app.require_subcommand(1);

    // ingest
    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "build a dataset manifest");
    c_ingest->add_option("--images", ingest.images_dir, "directory of tiles");
    c_ingest->add_option("--masks", ingest.masks_dir, "directory of binary masks");
    c_ingest->add_option("--kind", ingest.kind, "artifact kind for all entries");
    c_ingest->add_flag("--severity-from-dirs", ingest.severity_from_dirs,
                       "label from low/mid/high parent directory");
    c_ingest->add_flag("--oversample", ingest.oversample,
                       "replicate minority severity classes to equal counts");
    c_ingest->add_option("--synth-seg", ingest.synth_seg,
                         "generate N synthetic tile/mask pairs instead of scanning");
    c_ingest->add_option("--synth-severity", ingest.synth_severity,
                         "generate N synthetic tiles per severity class");
    c_ingest->add_option("--side", ingest.side, "synthetic tile side")
        ->default_val(64);
    c_ingest->add_option("--seed", ingest.seed)->default_val(42);
    c_ingest->add_option("--out", ingest.out_dir, "output directory")->required();
    c_ingest->add_option("--manifest", ingest.manifest_path, "manifest output path");

    // split
    std::string sp_manifest, sp_counts = "480,60,60", sp_out;
    std::int64_t sp_seed = 42;
    auto* c_split = app.add_subcommand("split", "train/valid/test split");
    c_split->add_option("--manifest", sp_manifest)->required();
    c_split->add_option("--counts", sp_counts, "train,valid,test");
    c_split->add_option("--seed", sp_seed);
    c_split->add_option("--out", sp_out)->required();

    // train-seg
    std::string ts_manifest, ts_split, ts_config, ts_kind, ts_out;
    std::int64_t ts_seed = -1;
    bool ts_augment = false;
    auto* c_train = app.add_subcommand("train-seg", "train a segmentation model");
    c_train->add_option("--manifest", ts_manifest)->required();
    c_train->add_option("--split", ts_split, "split file (train+valid roles used)");
    c_train->add_option("--config", ts_config)->required();
    c_train->add_option("--kind", ts_kind, "restrict to one artifact kind");
    c_train->add_flag("--augment", ts_augment, "zoom 0.3, rotation 15, horizontal flip");
    c_train->add_option("--seed", ts_seed, "override the config seed");
    c_train->add_option("--out", ts_out)->required();

    // eval-seg
    std::string es_model, es_manifest, es_split, es_thresholds = "0.90,0.85", es_kind,
                es_out;
    auto* c_eval = app.add_subcommand("eval-seg", "evaluate a segmentation checkpoint");
    c_eval->add_option("--model", es_model)->required();
    c_eval->add_option("--manifest", es_manifest)->required();
    c_eval->add_option("--split", es_split, "split file (test role used)");
    c_eval->add_option("--thresholds", es_thresholds, "IOU thresholds");
    c_eval->add_option("--kind", es_kind);
    c_eval->add_option("--out", es_out)->required();

    // crossval
    std::string cv_manifest, cv_config, cv_optimizer, cv_kind, cv_out;
    int cv_k = 6, cv_valid = 60;
    std::int64_t cv_seed = -1;
    auto* c_cv = app.add_subcommand("crossval", "k-fold cross validation");
    c_cv->add_option("--manifest", cv_manifest)->required();
    c_cv->add_option("--config", cv_config)->required();
    c_cv->add_option("--k", cv_k)->default_val(6);
    c_cv->add_option("--optimizer", cv_optimizer, "override the config optimizer");
    c_cv->add_option("--valid", cv_valid, "validation images carved per rotation");
    c_cv->add_option("--kind", cv_kind);
    c_cv->add_option("--seed", cv_seed, "override the config seed");
    c_cv->add_option("--out", cv_out)->required();

    // train-grid
    std::string tg_manifest, tg_backbones, tg_optimizers, tg_losses, tg_out;
    int tg_epochs = 25, tg_batch = 32;
    double tg_lr = 1e-4, tg_ratio = 0.7;
    bool tg_pretrained = false, tg_freeze = false;
    std::int64_t tg_seed = 42;
    auto* c_grid = app.add_subcommand("train-grid",
                                      "backbone x optimizer x loss transfer grid");
    c_grid->add_option("--manifest", tg_manifest)->required();
    c_grid->add_option("--backbones", tg_backbones, "comma list (default: all ten)");
    c_grid->add_option("--optimizers", tg_optimizers, "default adam,adamax,rmsprop");
    c_grid->add_option("--losses", tg_losses,
                       "default categorical_cross_entropy,kl_divergence");
    c_grid->add_option("--epochs", tg_epochs)->default_val(25);
    c_grid->add_option("--batch", tg_batch)->default_val(32);
    c_grid->add_option("--lr", tg_lr)->default_val(1e-4);
    c_grid->add_option("--train-ratio", tg_ratio)->default_val(0.7);
    c_grid->add_flag("--pretrained", tg_pretrained,
                     "use real backbone weights via WSIQC_BACKBONE_DIR");
    auto* freeze_opt = c_grid->add_flag("--freeze", tg_freeze,
                                        "freeze the feature extractor");
    c_grid->add_option("--seed", tg_seed);
    c_grid->add_option("--out", tg_out)->required();

    // select-bases
    std::string sb_grid, sb_out;
    int sb_k = 6;
    auto* c_select = app.add_subcommand("select-bases", "pick the top-k base models");
    c_select->add_option("--grid", sb_grid, "grid_results.csv")->required();
    c_select->add_option("--k", sb_k)->default_val(6);
    c_select->add_option("--out", sb_out)->required();

    // stack
    std::string st_selected, st_manifest, st_combos, st_kinds, st_out;
    int st_epochs = 25, st_batch = 32, st_folds = 5;
    double st_lr = 1e-4, st_ratio = 0.7;
    bool st_paper = false;
    std::int64_t st_seed = 42;
    auto* c_stack = app.add_subcommand("stack", "stacked-ensemble comparison");
    c_stack->add_option("--selected", st_selected, "selected.csv from select-bases")
        ->required();
    c_stack->add_option("--manifest", st_manifest)->required();
    c_stack->add_option("--combos", st_combos, "combo sizes (default 2..k)");
    c_stack->add_option("--kinds", st_kinds, "meta learners (default all ten)");
    c_stack->add_option("--epochs", st_epochs)->default_val(25);
    c_stack->add_option("--batch", st_batch)->default_val(32);
    c_stack->add_option("--lr", st_lr)->default_val(1e-4);
    c_stack->add_option("--train-ratio", st_ratio)->default_val(0.7);
    c_stack->add_flag("--paper-protocol", st_paper,
                      "fit meta learners on the eval split (leaky)");
    c_stack->add_option("--folds", st_folds, "internal OOF folds")->default_val(5);
    c_stack->add_option("--seed", st_seed);
    c_stack->add_option("--out", st_out)->required();

    // run
    std::string r_image, r_stack_dir, r_quality, r_out;
    std::vector<std::string> r_models;
    int r_tile = 256, r_stride = -1;
    double r_trigger = 0.01;
    std::string r_high = "exclude_region", r_mid = "flag_slide_prep", r_low = "retain";
    auto* c_run = app.add_subcommand("run", "tile, segment, grade and decide");
    c_run->add_option("--image", r_image)->required();
    c_run->add_option("--seg-model", r_models, "<kind>=<checkpoint>, repeatable")
        ->required();
    c_run->add_option("--stack-dir", r_stack_dir, "severity stack bundle directory");
    c_run->add_option("--tile", r_tile)->default_val(256);
    c_run->add_option("--stride", r_stride, "default: tile side");
    c_run->add_option("--trigger", r_trigger, "artifact fraction trigger")
        ->default_val(0.01);
    c_run->add_option("--high", r_high, "action for high severity");
    c_run->add_option("--mid", r_mid, "action for mid severity");
    c_run->add_option("--low", r_low, "action for low severity");
    c_run->add_option("--quality-scores", r_quality,
                      "optional external quality scores (tile_id\\tscore)");
    c_run->add_option("--out", r_out)->required();

    // report
    std::string rp_in, rp_out;
    auto* c_report = app.add_subcommand("report", "re-summarize saved verdicts");
    c_report->add_option("--in", rp_in, "directory with verdicts.jsonl")->required();
    c_report->add_option("--out", rp_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*c_ingest) return cmd_ingest(ingest);
        if (*c_split) return cmd_split(sp_manifest, sp_counts, sp_seed, sp_out);
        if (*c_train)
            return cmd_train_seg(ts_manifest, ts_split, ts_config, ts_kind, ts_augment,
                                 ts_seed, ts_out);
        if (*c_eval)
            return cmd_eval_seg(es_model, es_manifest, es_split, es_thresholds, es_kind,
                                es_out);
        if (*c_cv)
            return cmd_crossval(cv_manifest, cv_config, cv_k, cv_optimizer, cv_valid,
                                cv_kind, cv_seed, cv_out);
        if (*c_grid)
            return cmd_train_grid(tg_manifest, tg_backbones, tg_optimizers, tg_losses,
                                  tg_epochs, tg_batch, tg_lr, tg_ratio, tg_pretrained,
                                  tg_freeze, freeze_opt->count() > 0, tg_seed, tg_out);
        if (*c_select) return cmd_select_bases(sb_grid, sb_k, sb_out);
        if (*c_stack)
            return cmd_stack(st_selected, st_manifest, st_combos, st_kinds, st_epochs,
                             st_batch, st_lr, st_ratio, st_paper, st_folds, st_seed,
                             st_out);
        if (*c_run)
            return cmd_run(r_image, r_models, r_stack_dir, r_tile, r_stride, r_trigger,
                           r_high, r_mid, r_low, r_quality, r_out);
        if (*c_report) return cmd_report(rp_in, rp_out);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DivergenceError& e) {
        std::cerr << "training divergence: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
