#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "colonformer/tensor.hpp"

namespace colonformer {

enum class DatasetId { Kvasir, ClinicDB, ColonDB, CvcT, Etis };

std::string dataset_str(DatasetId id);
DatasetId parse_dataset(const std::string& s);
/// roster order used for stable report/test ordering
const std::vector<DatasetId>& dataset_roster();

struct SampleRecord {
    std::filesystem::path image_path;
    std::filesystem::path mask_path;
    DatasetId dataset_id = DatasetId::Kvasir;
    std::int64_t native_h = 0;
    std::int64_t native_w = 0;
    std::string stem;
};

/// Expects `root/images/<stem>.{jpg,jpeg,png}` with matching `root/masks/`.
/// Records come back sorted lexicographically by stem. Unmatched stems in
/// either direction and empty datasets are errors.
std::vector<SampleRecord> scan_dataset(const std::filesystem::path& root, DatasetId id);

enum class Protocol { Fixed90, KFold5, CrossDataset };
std::string protocol_str(Protocol p);
Protocol parse_protocol(const std::string& s);

constexpr int kNumFolds = 5;
constexpr int kNumCrossConfigs = 3;

struct CrossConfig {
    std::vector<DatasetId> train;
    DatasetId test;
};
/// Experiment-3 configurations, 1-based ids 1..3.
CrossConfig cross_dataset_config(int config_id);

struct SplitPlan {
    Protocol protocol = Protocol::Fixed90;
    std::uint64_t seed = 0;
    std::optional<int> index;  // KFold5 fold in [0,5) or CrossDataset config in [1,3]
    std::vector<SampleRecord> train;
    std::vector<SampleRecord> test;

    /// one line per record: `<role>\t<dataset_id>\t<stem>`, train block first
    std::string serialize() const;
};

/// Deterministic for fixed (records, protocol, seed, index).
SplitPlan make_split(const std::vector<SampleRecord>& records, Protocol protocol,
                     std::uint64_t seed, std::optional<int> index = std::nullopt);

struct ManifestLine {
    std::string role;
    std::string dataset;
    std::string stem;
};
std::vector<ManifestLine> parse_split_manifest(const std::string& text);

// ---- preprocessing ----

struct Sample {
    Tensor image;  // (N,3,S,S), channel-normalized
    Tensor mask;   // (N,1,S,S), binary
};

/// round(target*scale) snapped to the nearest multiple of 32 (ties upward)
std::int64_t snapped_size(int target_size, Scalar scale);

/// Square resize (bilinear image / nearest mask + rebinarize) and ImageNet
/// channel normalization.
Sample preprocess(const SampleRecord& rec, int target_size = 352, Scalar scale = 1.0);

/// Stacks preprocessed records into one batch.
Sample load_batch(const std::vector<SampleRecord>& records, const std::vector<std::size_t>& index,
                  int target_size, Scalar scale);

extern const Scalar kImagenetMean[3];
extern const Scalar kImagenetStd[3];

// ---- batch iteration ----

/// One epoch of batches over record indices: a seeded shuffle chunked into
/// batches with the final partial batch kept. Sharding by batch ranges gives
/// workers disjoint work whose concatenation equals the single-worker plan.
struct BatchPlan {
    std::vector<std::vector<std::size_t>> batches;

    static BatchPlan make(std::size_t n_records, std::size_t batch_size,
                          std::uint64_t shuffle_seed);
    BatchPlan shard(std::size_t worker, std::size_t num_workers) const;
    std::size_t num_batches() const { return batches.size(); }
};

}  // namespace colonformer
