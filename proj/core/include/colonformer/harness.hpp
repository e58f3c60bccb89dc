#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>

#include "colonformer/checkpoint.hpp"
#include "colonformer/data.hpp"
#include "colonformer/losses.hpp"
#include "colonformer/metrics.hpp"
#include "colonformer/model.hpp"

namespace colonformer {

struct TrainConfig {
    VariantName variant = VariantName::S;
    Scalar lr = 1e-4;
    int epochs = 20;
    int batch_size = 8;
    std::vector<Scalar> scales{0.75, 1.0, 1.25};
    int image_size = 352;
    std::uint64_t seed = 0;
    bool step_per_scale = true;  // false: losses summed over scales, one step
    bool deterministic = true;   // pins the OpenMP thread count for the run
    int threads = 0;             // 0 = leave as-is
    LossConfig loss;
    std::filesystem::path out_dir = ".";
    std::filesystem::path pretrained_backbone;  // optional partial checkpoint
    std::string run_name = "run";

    std::string canonical_text() const;  // sorted key=value lines
    std::uint64_t hash() const { return fnv1a(canonical_text()); }
};

struct RunArtifacts {
    std::filesystem::path checkpoint;
    std::filesystem::path loss_log;  // CSV: step,epoch,scale,loss
    std::filesystem::path manifest;  // resolved config + hash + split listing
    std::uint64_t config_hash = 0;
};

struct TrainResult {
    RunArtifacts artifacts;
    std::shared_ptr<ColonFormer> model;
};

/// Trains per the config on split.train: per batch one optimizer step per
/// scale (or one summed step), cosine-annealed Adam, last-epoch checkpoint.
/// A non-finite loss aborts with a diagnostic dump of the offending batch.
TrainResult train(const TrainConfig& config, const SplitPlan& split);

// ---- evaluation ----

class Predictor {
public:
    virtual ~Predictor() = default;
    /// probability map at the record's native resolution, (1,1,H,W) in [0,1]
    virtual Tensor predict_prob(const SampleRecord& rec) = 0;
};

class ModelPredictor : public Predictor {
public:
    ModelPredictor(const ColonFormer& model, int image_size = 352)
        : model_(model), image_size_(image_size) {}
    Tensor predict_prob(const SampleRecord& rec) override;

private:
    const ColonFormer& model_;
    int image_size_;
};

/// Returns the ground truth as the prediction (oracle short-circuit mode).
class OraclePredictor : public Predictor {
public:
    Tensor predict_prob(const SampleRecord& rec) override;
};

struct EvalOptions {
    Scalar threshold = 0.5;
    bool with_curves = false;
    int curve_points = 256;
};

struct DatasetReport {
    DatasetId dataset = DatasetId::Kvasir;
    int images = 0;
    MetricsReport metrics;
};

struct EvalReport {
    std::vector<DatasetReport> sections;  // roster order, present datasets only
    std::string to_json() const;          // fixed key order
    const DatasetReport& section(DatasetId id) const;
};

EvalReport evaluate(Predictor& predictor, const std::vector<SampleRecord>& test,
                    const EvalOptions& options = {});
/// Loads the checkpoint strictly (unmatched names = variant mismatch error).
EvalReport evaluate(const std::filesystem::path& checkpoint, VariantName variant,
                    const std::vector<SampleRecord>& test, const EvalOptions& options = {});

// ---- experiment drivers ----

struct ExperimentOptions {
    int runs = 5;              // seed-averaged runs (experiments 1 and 3)
    bool stub_oracle = false;  // skip training, evaluate the oracle predictor
    std::filesystem::path out_dir = ".";
    std::vector<DatasetId> kfold_datasets{DatasetId::ClinicDB, DatasetId::Kvasir};
};

/// Runs protocol 1, 2 or 3 over the given records and writes a report file
/// mirroring the corresponding results-table layout; returns the report text.
std::string run_experiment(int protocol_id, const std::vector<SampleRecord>& records,
                           const TrainConfig& base, const ExperimentOptions& options);

struct MeanStd {
    Scalar mean = 0.0;
    Scalar stddev = 0.0;  // sample standard deviation (n-1)
};
MeanStd mean_std(const std::vector<Scalar>& values);

std::int64_t count_parameters(VariantName variant);

/// Shared by predict/eval: preprocess at image_size, forward, sigmoid, resize
/// the probability map to (out_h, out_w).
Tensor infer_probability(const ColonFormer& model, const Tensor& preprocessed_image,
                         std::int64_t out_h, std::int64_t out_w);

}  // namespace colonformer
