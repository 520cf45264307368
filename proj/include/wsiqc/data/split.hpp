#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wsiqc/common/errors.hpp"
#include "wsiqc/common/rng.hpp"
#include "wsiqc/core/manifest.hpp"

namespace wsiqc {

struct SplitSpec {
    std::vector<std::string> train_ids;
    std::vector<std::string> valid_ids;
    std::vector<std::string> test_ids;
    std::int64_t seed = 0;
};

struct SplitCounts {
    std::size_t train = 0;
    std::size_t valid = 0;
    std::size_t test = 0;
};

// Shuffled, deterministic assignment of manifest ids into train/valid/test.
inline SplitSpec split_dataset(const DatasetManifest& manifest, SplitCounts counts,
                               std::int64_t seed) {
    auto ids = manifest.ids();
    if (counts.train + counts.valid + counts.test != ids.size())
        throw DataError("split_dataset: counts " + std::to_string(counts.train) + "+" +
                        std::to_string(counts.valid) + "+" + std::to_string(counts.test) +
                        " do not sum to manifest size " + std::to_string(ids.size()));
    Rng rng(static_cast<std::uint64_t>(seed));
    rng.shuffle(ids);
    SplitSpec s;
    s.seed = seed;
    s.train_ids.assign(ids.begin(), ids.begin() + counts.train);
    s.valid_ids.assign(ids.begin() + counts.train, ids.begin() + counts.train + counts.valid);
    s.test_ids.assign(ids.begin() + counts.train + counts.valid, ids.end());
    return s;
}

// k disjoint near-equal folds labeled A, B, C, ...
struct FoldPlan {
    std::vector<std::vector<std::string>> folds;
    int k = 0;

    static std::string fold_label(int i) {
        std::string label;
        int n = i;
        do {
            label.insert(label.begin(), static_cast<char>('A' + n % 26));
            n = n / 26 - 1;
        } while (n >= 0);
        return label;
    }
};

inline FoldPlan make_kfold(const DatasetManifest& manifest, int k, std::int64_t seed) {
    auto ids = manifest.ids();
    if (k < 2) throw DataError("make_kfold: k must be >= 2");
    if (ids.size() < static_cast<std::size_t>(k))
        throw DataError("make_kfold: k=" + std::to_string(k) + " exceeds manifest size " +
                        std::to_string(ids.size()));
    Rng rng(static_cast<std::uint64_t>(seed));
    rng.shuffle(ids);
    FoldPlan plan;
    plan.k = k;
    plan.folds.assign(static_cast<std::size_t>(k), {});
    // Sizes differ by at most 1: the first (n % k) folds get one extra.
    const std::size_t base = ids.size() / static_cast<std::size_t>(k);
    const std::size_t extra = ids.size() % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (int f = 0; f < k; ++f) {
        const std::size_t sz = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
        plan.folds[static_cast<std::size_t>(f)].assign(ids.begin() + pos, ids.begin() + pos + sz);
        pos += sz;
    }
    return plan;
}

// Rotation i tests on fold i and trains on the remaining k-1 folds.
struct FoldRotation {
    int test_fold = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

inline FoldRotation fold_rotation(const FoldPlan& plan, int i) {
    if (i < 0 || i >= plan.k) throw DataError("fold_rotation: index out of range");
    FoldRotation r;
    r.test_fold = i;
    r.test_ids = plan.folds[static_cast<std::size_t>(i)];
    for (int f = 0; f < plan.k; ++f)
        if (f != i)
            r.train_ids.insert(r.train_ids.end(), plan.folds[static_cast<std::size_t>(f)].begin(),
                               plan.folds[static_cast<std::size_t>(f)].end());
    return r;
}

// --- text round trip: "<id>\t<train|valid|test>" per line -----------------

inline void save_split(const SplitSpec& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write split file: " + path);
    out << "# seed=" << s.seed << "\n";
    for (const auto& id : s.train_ids) out << id << "\ttrain\n";
    for (const auto& id : s.valid_ids) out << id << "\tvalid\n";
    for (const auto& id : s.test_ids) out << id << "\ttest\n";
}

inline SplitSpec load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open split file: " + path);
    SplitSpec s;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find("seed=");
            if (eq != std::string::npos) s.seed = std::stoll(line.substr(eq + 5));
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("split file " + path + " line " + std::to_string(line_no) +
                            ": expected <id>\\t<role>");
        const std::string id = line.substr(0, tab);
        const std::string role = line.substr(tab + 1);
        if (role == "train") s.train_ids.push_back(id);
        else if (role == "valid") s.valid_ids.push_back(id);
        else if (role == "test") s.test_ids.push_back(id);
        else
            throw DataError("split file " + path + " line " + std::to_string(line_no) +
                            ": unknown role '" + role + "'");
    }
    return s;
}

}  // namespace wsiqc
