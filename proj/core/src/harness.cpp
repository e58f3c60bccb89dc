#include "colonformer/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "colonformer/image_io.hpp"
#include "colonformer/optim.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;

namespace colonformer {

std::string TrainConfig::canonical_text() const {
    std::ostringstream os;
    os << "batch_size=" << batch_size << '\n';
    os << "deterministic=" << (deterministic ? 1 : 0) << '\n';
    os << "epochs=" << epochs << '\n';
    os << "image_size=" << image_size << '\n';
    os << "loss.alpha=" << loss.alpha << '\n';
    os << "loss.eps=" << loss.eps << '\n';
    os << "loss.gamma=" << loss.gamma << '\n';
    os << "loss.include_center=" << (loss.include_center ? 1 : 0) << '\n';
    os << "loss.lambda=" << loss.lambda << '\n';
    os << "loss.neighborhood=" << loss.neighborhood << '\n';
    os << "lr=" << lr << '\n';
    os << "pretrained_backbone=" << pretrained_backbone.string() << '\n';
    os << "run_name=" << run_name << '\n';
    os << "scales=";
    for (std::size_t i = 0; i < scales.size(); ++i) os << (i ? "," : "") << scales[i];
    os << '\n';
    os << "seed=" << seed << '\n';
    os << "step_per_scale=" << (step_per_scale ? 1 : 0) << '\n';
    os << "threads=" << threads << '\n';
    os << "variant=" << variant_str(variant) << '\n';
    return os.str();
}

namespace {

void pin_threads(const TrainConfig& cfg) {
#ifdef _OPENMP
    if (cfg.deterministic && cfg.threads > 0) omp_set_num_threads(cfg.threads);
#else
    (void)cfg;
#endif
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path.string());
    os << text;
}

std::string batch_manifest(const SplitPlan& split, const std::vector<std::size_t>& index) {
    std::ostringstream os;
    for (std::size_t i : index) {
        const auto& r = split.train.at(i);
        os << dataset_str(r.dataset_id) << '\t' << r.stem << '\t' << r.image_path.string()
           << '\n';
    }
    return os.str();
}

}  // namespace

TrainResult train(const TrainConfig& config, const SplitPlan& split) {
    if (split.train.empty()) throw Error("train: split has no training records");
    if (config.scales.empty()) throw Error("train: at least one scale required");
    pin_threads(config);
    fs::create_directories(config.out_dir);

    auto model = std::make_shared<ColonFormer>(ModelConfig::for_variant(config.variant),
                                               config.seed);
    if (!config.pretrained_backbone.empty()) {
        const LoadReport report =
            apply_state(*model, load_checkpoint(config.pretrained_backbone), /*strict=*/false);
        write_text(config.out_dir / (config.run_name + "_pretrained_load.txt"),
                   report.summary() + "\n");
    }
    Adam opt(model->params());

    const std::size_t batches_per_epoch =
        (split.train.size() + config.batch_size - 1) / static_cast<std::size_t>(config.batch_size);
    const std::int64_t steps_per_batch =
        config.step_per_scale ? static_cast<std::int64_t>(config.scales.size()) : 1;
    const std::int64_t total_steps =
        static_cast<std::int64_t>(config.epochs) * static_cast<std::int64_t>(batches_per_epoch) *
        steps_per_batch;

    std::ostringstream log;
    log << "step,epoch,scale,loss\n";
    std::int64_t step = 0;

    auto run_step = [&](const Var& loss_var, int epoch, const std::string& scale_label,
                        const std::vector<std::size_t>& index) {
        const Scalar loss_value = loss_var.value().item();
        if (!std::isfinite(loss_value)) {
            const fs::path dump = config.out_dir / (config.run_name + "_nonfinite_batch.txt");
            write_text(dump, "step=" + std::to_string(step) + " epoch=" + std::to_string(epoch) +
                                 " scale=" + scale_label + "\n" + batch_manifest(split, index));
            throw Error("non-finite loss at step " + std::to_string(step) +
                        "; offending batch manifest dumped to " + dump.string());
        }
        model->zero_grads();
        loss_var.backward();
        opt.step(cosine_lr(config.lr, step, total_steps));
        log << step << ',' << epoch << ',' << scale_label << ',' << std::setprecision(17)
            << loss_value << '\n';
        ++step;
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const std::uint64_t epoch_seed =
            config.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch + 1));
        const BatchPlan plan = BatchPlan::make(split.train.size(),
                                               static_cast<std::size_t>(config.batch_size),
                                               epoch_seed);
        for (const auto& index : plan.batches) {
            if (config.step_per_scale) {
                for (Scalar scale : config.scales) {
                    const Sample batch = load_batch(split.train, index, config.image_size, scale);
                    const PredictionSet preds = model->forward(Var::constant(batch.image));
                    const Var loss = deep_supervised_loss(preds, batch.mask, config.loss);
                    std::ostringstream s;
                    s << scale;
                    run_step(loss, epoch, s.str(), index);
                }
            } else {
                Var loss;
                for (Scalar scale : config.scales) {
                    const Sample batch = load_batch(split.train, index, config.image_size, scale);
                    const PredictionSet preds = model->forward(Var::constant(batch.image));
                    const Var l = deep_supervised_loss(preds, batch.mask, config.loss);
                    loss = loss.defined() ? add(loss, l) : l;
                }
                run_step(loss, epoch, "all", index);
            }
        }
    }

    RunArtifacts artifacts;
    artifacts.config_hash = config.hash();
    artifacts.checkpoint = config.out_dir / (config.run_name + ".ckpt");
    artifacts.loss_log = config.out_dir / (config.run_name + "_loss.csv");
    artifacts.manifest = config.out_dir / (config.run_name + "_manifest.txt");
    save_checkpoint(artifacts.checkpoint, state_dict(*model));
    write_text(artifacts.loss_log, log.str());

    std::ostringstream manifest;
    manifest << "# colonformer run manifest\n";
    manifest << "config_hash=" << artifacts.config_hash << '\n';
    manifest << config.canonical_text();
    manifest << "split_protocol=" << protocol_str(split.protocol) << '\n';
    manifest << "split_seed=" << split.seed << '\n';
    if (split.index) manifest << "split_index=" << *split.index << '\n';
    manifest << "split_hash=" << fnv1a(split.serialize()) << '\n';
    manifest << split.serialize();
    write_text(artifacts.manifest, manifest.str());

    return {artifacts, model};
}

Tensor infer_probability(const ColonFormer& model, const Tensor& preprocessed_image,
                         std::int64_t out_h, std::int64_t out_w) {
    NoGradGuard no_grad;
    const PredictionSet preds = model.forward(Var::constant(preprocessed_image));
    const Tensor prob = sigmoid(preds.final_map()).value();
    return resize_bilinear(prob, out_h, out_w);
}

Tensor ModelPredictor::predict_prob(const SampleRecord& rec) {
    const Sample sample = preprocess(rec, image_size_, 1.0);
    return infer_probability(model_, sample.image, rec.native_h, rec.native_w);
}

Tensor OraclePredictor::predict_prob(const SampleRecord& rec) {
    Tensor mask = load_mask_gray(rec.mask_path);
    Scalar* m = mask.data();
    for (std::int64_t i = 0; i < mask.numel(); ++i) m[i] = m[i] >= 0.5 ? 1.0 : 0.0;
    return mask;
}

const DatasetReport& EvalReport::section(DatasetId id) const {
    for (const auto& s : sections) {
        if (s.dataset == id) return s;
    }
    throw Error("report has no section for " + dataset_str(id));
}

namespace {
std::string fmt(Scalar v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}
}  // namespace

std::string EvalReport::to_json() const {
    std::ostringstream os;
    os << "{\n";
    for (std::size_t i = 0; i < sections.size(); ++i) {
        const auto& s = sections[i];
        os << "  \"" << dataset_str(s.dataset) << "\": {"
           << "\"mDice\": " << fmt(s.metrics.aggregate.dice) << ", "
           << "\"mIoU\": " << fmt(s.metrics.aggregate.iou) << ", "
           << "\"recall\": " << fmt(s.metrics.aggregate.recall) << ", "
           << "\"precision\": " << fmt(s.metrics.aggregate.precision) << ", "
           << "\"images\": " << s.images << "}" << (i + 1 < sections.size() ? "," : "") << "\n";
    }
    os << "}\n";
    return os.str();
}

EvalReport evaluate(Predictor& predictor, const std::vector<SampleRecord>& test,
                    const EvalOptions& options) {
    if (test.empty()) throw Error("evaluate: empty test split");
    EvalReport report;
    for (DatasetId id : dataset_roster()) {
        std::vector<SampleRecord> subset;
        for (const auto& r : test) {
            if (r.dataset_id == id) subset.push_back(r);
        }
        if (subset.empty()) continue;
        std::sort(subset.begin(), subset.end(),
                  [](const SampleRecord& a, const SampleRecord& b) { return a.stem < b.stem; });
        DatasetReport section;
        section.dataset = id;
        section.images = static_cast<int>(subset.size());
        std::vector<Tensor> probs, gts;
        for (const auto& rec : subset) {
            Tensor prob = predictor.predict_prob(rec);
            Tensor gt = load_mask_gray(rec.mask_path);
            Scalar* g = gt.data();
            for (std::int64_t i = 0; i < gt.numel(); ++i) g[i] = g[i] >= 0.5 ? 1.0 : 0.0;
            if (prob.shape() != gt.shape()) {
                throw Error("prediction/mask size mismatch for " + rec.stem);
            }
            section.metrics.per_image.push_back(image_metrics(prob, gt, options.threshold));
            if (options.with_curves) {
                probs.push_back(std::move(prob));
                gts.push_back(std::move(gt));
            }
        }
        section.metrics.aggregate = aggregate_metrics(section.metrics.per_image);
        if (options.with_curves) {
            section.metrics.curve =
                sweep_curves(probs, gts, uniform_thresholds(options.curve_points));
        }
        report.sections.push_back(std::move(section));
    }
    return report;
}

EvalReport evaluate(const fs::path& checkpoint, VariantName variant,
                    const std::vector<SampleRecord>& test, const EvalOptions& options) {
    ColonFormer model(ModelConfig::for_variant(variant), 0);
    apply_state(model, load_checkpoint(checkpoint), /*strict=*/true);
    ModelPredictor predictor(model);
    return evaluate(predictor, test, options);
}

MeanStd mean_std(const std::vector<Scalar>& values) {
    if (values.empty()) throw Error("mean_std of empty list");
    MeanStd out;
    for (Scalar v : values) out.mean += v;
    out.mean /= static_cast<Scalar>(values.size());
    if (values.size() > 1) {
        Scalar acc = 0.0;
        for (Scalar v : values) acc += (v - out.mean) * (v - out.mean);
        out.stddev = std::sqrt(acc / static_cast<Scalar>(values.size() - 1));
    }
    return out;
}

std::int64_t count_parameters(VariantName variant) {
    ColonFormer model(ModelConfig::for_variant(variant), 0);
    return model.parameter_count();
}

namespace {

std::string table1_dataset_name(DatasetId id) {
    switch (id) {
        case DatasetId::Kvasir: return "Kvasir";
        case DatasetId::ClinicDB: return "CVC-ClinicDB";
        case DatasetId::ColonDB: return "CVC-ColonDB";
        case DatasetId::CvcT: return "CVC-T";
        case DatasetId::Etis: return "ETIS-Larib";
    }
    return "?";
}

struct MetricSeries {
    std::vector<Scalar> dice, iou, recall, precision;
    void push(const ImageMetrics& m) {
        dice.push_back(m.dice);
        iou.push_back(m.iou);
        recall.push_back(m.recall);
        precision.push_back(m.precision);
    }
};

EvalReport eval_for_run(const TrainConfig& base, const ExperimentOptions& options,
                        const SplitPlan& split, std::uint64_t run_seed,
                        const std::string& run_name) {
    if (options.stub_oracle) {
        OraclePredictor oracle;
        return evaluate(oracle, split.test);
    }
    TrainConfig cfg = base;
    cfg.seed = run_seed;
    cfg.out_dir = options.out_dir;
    cfg.run_name = run_name;
    const TrainResult result = train(cfg, split);
    ModelPredictor predictor(*result.model, cfg.image_size);
    return evaluate(predictor, split.test);
}

std::string experiment1(const std::vector<SampleRecord>& records, const TrainConfig& base,
                        const ExperimentOptions& options) {
    std::map<DatasetId, MetricSeries> series;
    const SplitPlan split = make_split(records, Protocol::Fixed90, base.seed);
    for (int run = 0; run < options.runs; ++run) {
        const EvalReport report =
            eval_for_run(base, options, split, base.seed + static_cast<std::uint64_t>(run),
                         "exp1_run" + std::to_string(run));
        for (const auto& s : report.sections) series[s.dataset].push(s.metrics.aggregate);
    }
    std::ostringstream os;
    os << "# Experiment 1: 90/10 Kvasir+ClinicDB train split, results averaged over "
       << options.runs << " runs\n";
    os << "Method";
    std::vector<DatasetId> present;
    for (DatasetId id : dataset_roster()) {
        if (series.count(id)) {
            present.push_back(id);
            os << " | " << table1_dataset_name(id) << " mDice mIOU";
        }
    }
    os << '\n';
    os << "ColonFormer-" << variant_str(base.variant);
    for (DatasetId id : present) {
        os << " | " << fmt(mean_std(series[id].dice).mean, 3) << ' '
           << fmt(mean_std(series[id].iou).mean, 3);
    }
    os << '\n';
    return os.str();
}

std::string experiment2(const std::vector<SampleRecord>& records, const TrainConfig& base,
                        const ExperimentOptions& options) {
    std::ostringstream os;
    os << "# Experiment 2: 5-fold cross-validation, mean +/- std over folds\n";
    os << "Dataset | Method | mDice | mIOU | Recall | Precision\n";
    for (DatasetId id : options.kfold_datasets) {
        std::vector<SampleRecord> subset;
        for (const auto& r : records) {
            if (r.dataset_id == id) subset.push_back(r);
        }
        if (subset.empty()) {
            throw Error("experiment 2 needs " + dataset_str(id) + " records");
        }
        MetricSeries series;
        for (int fold = 0; fold < kNumFolds; ++fold) {
            const SplitPlan split = make_split(subset, Protocol::KFold5, base.seed, fold);
            const EvalReport report =
                eval_for_run(base, options, split, base.seed,
                             "exp2_" + dataset_str(id) + "_fold" + std::to_string(fold));
            const auto& m = report.section(id).metrics.aggregate;
            series.push(m);
            os << table1_dataset_name(id) << " | fold " << (fold + 1) << " | " << fmt(m.dice, 3)
               << " | " << fmt(m.iou, 3) << " | " << fmt(m.recall, 3) << " | "
               << fmt(m.precision, 3) << '\n';
        }
        auto cell = [&](const std::vector<Scalar>& v) {
            const MeanStd ms = mean_std(v);
            return fmt(ms.mean, 3) + " +/- " + fmt(ms.stddev, 3);
        };
        os << table1_dataset_name(id) << " | ColonFormer-" << variant_str(base.variant)
           << " (mean +/- std) | " << cell(series.dice) << " | " << cell(series.iou) << " | "
           << cell(series.recall) << " | " << cell(series.precision) << '\n';
    }
    return os.str();
}

std::string experiment3(const std::vector<SampleRecord>& records, const TrainConfig& base,
                        const ExperimentOptions& options) {
    std::ostringstream os;
    os << "# Experiment 3: cross-dataset evaluation, results averaged over " << options.runs
       << " runs\n";
    os << "Train | Test | Method | mDice | mIOU | Recall | Precision\n";
    for (int config_id = 1; config_id <= kNumCrossConfigs; ++config_id) {
        const CrossConfig cc = cross_dataset_config(config_id);
        const SplitPlan split = make_split(records, Protocol::CrossDataset, base.seed, config_id);
        MetricSeries series;
        for (int run = 0; run < options.runs; ++run) {
            const EvalReport report = eval_for_run(
                base, options, split, base.seed + static_cast<std::uint64_t>(run),
                "exp3_cfg" + std::to_string(config_id) + "_run" + std::to_string(run));
            series.push(report.section(cc.test).metrics.aggregate);
        }
        std::string train_names;
        for (std::size_t i = 0; i < cc.train.size(); ++i) {
            train_names += (i ? " + " : "") + table1_dataset_name(cc.train[i]);
        }
        os << train_names << " | " << table1_dataset_name(cc.test) << " | ColonFormer-"
           << variant_str(base.variant) << " | " << fmt(mean_std(series.dice).mean, 3) << " | "
           << fmt(mean_std(series.iou).mean, 3) << " | " << fmt(mean_std(series.recall).mean, 3)
           << " | " << fmt(mean_std(series.precision).mean, 3) << '\n';
    }
    return os.str();
}

}  // namespace

std::string run_experiment(int protocol_id, const std::vector<SampleRecord>& records,
                           const TrainConfig& base, const ExperimentOptions& options) {
    fs::create_directories(options.out_dir);
    std::string text;
    switch (protocol_id) {
        case 1: text = experiment1(records, base, options); break;
        case 2: text = experiment2(records, base, options); break;
        case 3: text = experiment3(records, base, options); break;
        default: throw Error("experiment protocol must be 1, 2 or 3");
    }
    write_text(options.out_dir / ("experiment" + std::to_string(protocol_id) + "_report.txt"),
               text);
    return text;
}

}  // namespace colonformer
