#pragma once

// Multiply-accumulate bookkeeping for the attention kernels.
//
// Counts are derived analytically from operand shapes at dispatch time, one
// entry per executed kernel, keyed by attention type and backbone stage.
// Only matmul-style MACs are counted (projections, logit and value products);
// softmax, scaling and bias additions are excluded, matching the usual
// attention-complexity accounting.

#include <cstdint>
#include <map>
#include <sstream>
#include <string>

namespace vidt {

enum class AttnKind { PatchPatch, DetDet, DetPatch, YolosJoint };

inline const char* attn_kind_name(AttnKind k) {
    switch (k) {
        case AttnKind::PatchPatch: return "patch_patch";
        case AttnKind::DetDet: return "det_det";
        case AttnKind::DetPatch: return "det_patch";
        case AttnKind::YolosJoint: return "yolos_joint";
    }
    return "?";
}

class FlopLedger {
public:
    using Key = std::pair<AttnKind, int>;

    void add(AttnKind kind, int stage, std::uint64_t macs) { counts_[{kind, stage}] += macs; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& [k, v] : counts_) t += v;
        return t;
    }

    std::uint64_t by_kind(AttnKind kind) const {
        std::uint64_t t = 0;
        for (const auto& [k, v] : counts_)
            if (k.first == kind) t += v;
        return t;
    }

    const std::map<Key, std::uint64_t>& entries() const { return counts_; }

    void merge(const FlopLedger& other) {
        for (const auto& [k, v] : other.counts_) counts_[k] += v;
    }

    bool operator==(const FlopLedger& other) const { return counts_ == other.counts_; }

    // Delimited text: attention_type <TAB> stage <TAB> MACs
    std::string to_table() const {
        std::ostringstream os;
        os << "attention_type\tstage\tMACs\n";
        for (const auto& [k, v] : counts_)
            os << attn_kind_name(k.first) << "\t" << k.second << "\t" << v << "\n";
        return os.str();
    }

private:
    std::map<Key, std::uint64_t> counts_;
};

inline FlopLedger*& active_ledger() {
    thread_local FlopLedger* ledger = nullptr;
    return ledger;
}

class LedgerScope {
public:
    explicit LedgerScope(FlopLedger& l) : prev_(active_ledger()) { active_ledger() = &l; }
    ~LedgerScope() { active_ledger() = prev_; }
    LedgerScope(const LedgerScope&) = delete;
    LedgerScope& operator=(const LedgerScope&) = delete;

private:
    FlopLedger* prev_;
};

inline void note_macs(AttnKind kind, int stage, std::uint64_t macs) {
    if (auto* l = active_ledger()) l->add(kind, stage, macs);
}

}  // namespace vidt
