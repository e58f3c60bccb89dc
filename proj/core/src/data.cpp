#include "colonformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "colonformer/image_io.hpp"

namespace fs = std::filesystem;

namespace colonformer {

const Scalar kImagenetMean[3] = {0.485, 0.456, 0.406};
const Scalar kImagenetStd[3] = {0.229, 0.224, 0.225};

std::string dataset_str(DatasetId id) {
    switch (id) {
        case DatasetId::Kvasir: return "Kvasir";
        case DatasetId::ClinicDB: return "ClinicDB";
        case DatasetId::ColonDB: return "ColonDB";
        case DatasetId::CvcT: return "CVC-T";
        case DatasetId::Etis: return "ETIS";
    }
    return "?";
}

DatasetId parse_dataset(const std::string& s) {
    std::string l;
    for (char c : s) l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (l == "kvasir") return DatasetId::Kvasir;
    if (l == "clinicdb" || l == "cvc-clinicdb") return DatasetId::ClinicDB;
    if (l == "colondb" || l == "cvc-colondb") return DatasetId::ColonDB;
    if (l == "cvc-t" || l == "cvct" || l == "endoscene") return DatasetId::CvcT;
    if (l == "etis" || l == "etis-larib") return DatasetId::Etis;
    throw Error("unknown dataset '" + s + "'");
}

const std::vector<DatasetId>& dataset_roster() {
    static const std::vector<DatasetId> roster{DatasetId::Kvasir, DatasetId::ClinicDB,
                                               DatasetId::ColonDB, DatasetId::CvcT,
                                               DatasetId::Etis};
    return roster;
}

std::string protocol_str(Protocol p) {
    switch (p) {
        case Protocol::Fixed90: return "fixed90";
        case Protocol::KFold5: return "kfold5";
        case Protocol::CrossDataset: return "crossdataset";
    }
    return "?";
}

Protocol parse_protocol(const std::string& s) {
    std::string l;
    for (char c : s) l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (l == "fixed90") return Protocol::Fixed90;
    if (l == "kfold5" || l == "kfold") return Protocol::KFold5;
    if (l == "crossdataset" || l == "cross") return Protocol::CrossDataset;
    throw Error("unknown protocol '" + s + "' (expected fixed90, kfold5 or crossdataset)");
}

CrossConfig cross_dataset_config(int config_id) {
    switch (config_id) {
        case 1: return {{DatasetId::ColonDB, DatasetId::Etis}, DatasetId::ClinicDB};
        case 2: return {{DatasetId::ColonDB}, DatasetId::ClinicDB};
        case 3: return {{DatasetId::ClinicDB}, DatasetId::Etis};
        default:
            throw Error("cross-dataset config must be 1, 2 or 3, got " +
                        std::to_string(config_id));
    }
}

namespace {
bool has_image_ext(const fs::path& p) {
    std::string e = p.extension().string();
    for (char& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e == ".jpg" || e == ".jpeg" || e == ".png";
}

std::map<std::string, fs::path> collect_stems(const fs::path& dir, const char* what) {
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !has_image_ext(entry.path())) continue;
        const std::string stem = entry.path().stem().string();
        auto [it, inserted] = out.emplace(stem, entry.path());
        if (!inserted) {
            throw Error(std::string("duplicate ") + what + " stem '" + stem + "' in " +
                        dir.string());
        }
    }
    return out;
}
}  // namespace

std::vector<SampleRecord> scan_dataset(const fs::path& root, DatasetId id) {
    const auto images = collect_stems(root / "images", "image");
    const auto masks = collect_stems(root / "masks", "mask");
    if (images.empty() && masks.empty()) {
        throw Error("empty dataset: no image/mask pairs under " + root.string());
    }
    std::vector<std::string> missing_masks, missing_images;
    for (const auto& [stem, path] : images) {
        if (!masks.count(stem)) missing_masks.push_back(stem);
    }
    for (const auto& [stem, path] : masks) {
        if (!images.count(stem)) missing_images.push_back(stem);
    }
    if (!missing_masks.empty() || !missing_images.empty()) {
        std::ostringstream os;
        os << "unmatched stems in " << root.string() << ":";
        for (const auto& s : missing_masks) os << " image '" << s << "' has no mask;";
        for (const auto& s : missing_images) os << " mask '" << s << "' has no image;";
        throw Error(os.str());
    }
    std::vector<SampleRecord> records;
    records.reserve(images.size());
    for (const auto& [stem, path] : images) {  // std::map: already stem-sorted
        SampleRecord rec;
        rec.image_path = path;
        rec.mask_path = masks.at(stem);
        rec.dataset_id = id;
        rec.stem = stem;
        std::tie(rec.native_h, rec.native_w) = image_size(path);
        records.push_back(std::move(rec));
    }
    return records;
}

std::string SplitPlan::serialize() const {
    std::ostringstream os;
    for (const auto& r : train) os << "train\t" << dataset_str(r.dataset_id) << '\t' << r.stem << '\n';
    for (const auto& r : test) os << "test\t" << dataset_str(r.dataset_id) << '\t' << r.stem << '\n';
    return os.str();
}

std::vector<ManifestLine> parse_split_manifest(const std::string& text) {
    std::vector<ManifestLine> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            throw Error("malformed manifest line: " + line);
        }
        out.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
    }
    return out;
}

namespace {
std::vector<SampleRecord> filter_by_dataset(const std::vector<SampleRecord>& records,
                                            DatasetId id) {
    std::vector<SampleRecord> out;
    for (const auto& r : records) {
        if (r.dataset_id == id) out.push_back(r);
    }
    return out;
}

void sort_by_roster_and_stem(std::vector<SampleRecord>& v) {
    auto roster_pos = [](DatasetId id) {
        const auto& roster = dataset_roster();
        return std::distance(roster.begin(), std::find(roster.begin(), roster.end(), id));
    };
    std::sort(v.begin(), v.end(), [&](const SampleRecord& a, const SampleRecord& b) {
        const auto pa = roster_pos(a.dataset_id), pb = roster_pos(b.dataset_id);
        return pa != pb ? pa < pb : a.stem < b.stem;
    });
}
}  // namespace

SplitPlan make_split(const std::vector<SampleRecord>& records, Protocol protocol,
                     std::uint64_t seed, std::optional<int> index) {
    SplitPlan plan;
    plan.protocol = protocol;
    plan.seed = seed;
    plan.index = index;
    Rng rng(seed);

    switch (protocol) {
        case Protocol::Fixed90: {
            bool any_train_dataset = false;
            for (DatasetId id : {DatasetId::Kvasir, DatasetId::ClinicDB}) {
                auto subset = filter_by_dataset(records, id);
                if (subset.empty()) continue;
                any_train_dataset = true;
                rng.shuffle(subset);
                const std::size_t n_train =
                    static_cast<std::size_t>(0.9 * static_cast<Scalar>(subset.size()));
                plan.train.insert(plan.train.end(), subset.begin(), subset.begin() + n_train);
                plan.test.insert(plan.test.end(), subset.begin() + n_train, subset.end());
            }
            if (!any_train_dataset) {
                throw Error("fixed90 split needs Kvasir or ClinicDB records");
            }
            for (DatasetId id : {DatasetId::ColonDB, DatasetId::CvcT, DatasetId::Etis}) {
                auto subset = filter_by_dataset(records, id);
                plan.test.insert(plan.test.end(), subset.begin(), subset.end());
            }
            sort_by_roster_and_stem(plan.test);
            break;
        }
        case Protocol::KFold5: {
            if (!index) throw Error("kfold5 split requires a fold index");
            const int fold = *index;
            if (fold < 0 || fold >= kNumFolds) {
                throw Error("fold index " + std::to_string(fold) + " out of range [0," +
                            std::to_string(kNumFolds) + ")");
            }
            for (const auto& r : records) {
                if (r.dataset_id != records.front().dataset_id) {
                    throw Error("kfold5 expects records from a single dataset");
                }
            }
            std::vector<SampleRecord> shuffled = records;
            rng.shuffle(shuffled);
            const std::size_t n = shuffled.size();
            const std::size_t base = n / kNumFolds, rem = n % kNumFolds;
            std::size_t start = 0;
            for (int f = 0; f < kNumFolds; ++f) {
                const std::size_t len = base + (static_cast<std::size_t>(f) < rem ? 1 : 0);
                for (std::size_t i = start; i < start + len; ++i) {
                    (f == fold ? plan.test : plan.train).push_back(shuffled[i]);
                }
                start += len;
            }
            break;
        }
        case Protocol::CrossDataset: {
            if (!index) throw Error("cross-dataset split requires a config id (1..3)");
            const CrossConfig cfg = cross_dataset_config(*index);
            for (DatasetId id : cfg.train) {
                auto subset = filter_by_dataset(records, id);
                if (subset.empty()) {
                    throw Error("cross-dataset config " + std::to_string(*index) +
                                " needs " + dataset_str(id) + " records for training");
                }
                plan.train.insert(plan.train.end(), subset.begin(), subset.end());
            }
            auto test_subset = filter_by_dataset(records, cfg.test);
            if (test_subset.empty()) {
                throw Error("cross-dataset config " + std::to_string(*index) + " needs " +
                            dataset_str(cfg.test) + " records for testing");
            }
            plan.test = std::move(test_subset);
            break;
        }
    }
    return plan;
}

std::int64_t snapped_size(int target_size, Scalar scale) {
    const std::int64_t raw = std::llround(static_cast<Scalar>(target_size) * scale);
    const std::int64_t snapped = std::llround(static_cast<Scalar>(raw) / 32.0) * 32;
    return std::max<std::int64_t>(32, snapped);
}

Sample preprocess(const SampleRecord& rec, int target_size, Scalar scale) {
    const std::int64_t s = snapped_size(target_size, scale);
    Tensor image = load_image_rgb(rec.image_path);
    Tensor mask = load_mask_gray(rec.mask_path);
    image = resize_bilinear(image, s, s);
    mask = resize_nearest(mask, s, s);
    Scalar* img = image.data();
    for (int c = 0; c < 3; ++c) {
        Scalar* plane = img + c * s * s;
        for (std::int64_t i = 0; i < s * s; ++i) {
            plane[i] = (plane[i] - kImagenetMean[c]) / kImagenetStd[c];
        }
    }
    Scalar* m = mask.data();
    for (std::int64_t i = 0; i < s * s; ++i) m[i] = m[i] >= 0.5 ? 1.0 : 0.0;
    return {image, mask};
}

Sample load_batch(const std::vector<SampleRecord>& records, const std::vector<std::size_t>& index,
                  int target_size, Scalar scale) {
    if (index.empty()) throw Error("load_batch: empty index list");
    const std::int64_t s = snapped_size(target_size, scale);
    const std::int64_t n = static_cast<std::int64_t>(index.size());
    Sample batch{Tensor(Shape{n, 3, s, s}), Tensor(Shape{n, 1, s, s})};
    for (std::int64_t i = 0; i < n; ++i) {
        Sample one = preprocess(records.at(index[static_cast<std::size_t>(i)]), target_size, scale);
        std::copy(one.image.data(), one.image.data() + 3 * s * s,
                  batch.image.data() + i * 3 * s * s);
        std::copy(one.mask.data(), one.mask.data() + s * s, batch.mask.data() + i * s * s);
    }
    return batch;
}

BatchPlan BatchPlan::make(std::size_t n_records, std::size_t batch_size,
                          std::uint64_t shuffle_seed) {
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    std::vector<std::size_t> order(n_records);
    for (std::size_t i = 0; i < n_records; ++i) order[i] = i;
    Rng rng(shuffle_seed);
    rng.shuffle(order);
    BatchPlan plan;
    for (std::size_t start = 0; start < n_records; start += batch_size) {
        const std::size_t end = std::min(n_records, start + batch_size);
        plan.batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return plan;
}

BatchPlan BatchPlan::shard(std::size_t worker, std::size_t num_workers) const {
    if (num_workers == 0 || worker >= num_workers) throw Error("invalid shard arguments");
    // contiguous batch ranges: concatenating shards in worker order
    // reproduces the single-worker plan
    const std::size_t n = batches.size();
    const std::size_t base = n / num_workers, rem = n % num_workers;
    const std::size_t len = base + (worker < rem ? 1 : 0);
    const std::size_t start = worker * base + std::min(worker, rem);
    BatchPlan out;
    out.batches.assign(batches.begin() + start, batches.begin() + start + len);
    return out;
}

}  // namespace colonformer
