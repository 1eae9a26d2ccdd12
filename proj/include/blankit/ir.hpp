#pragma once

// Interchange data model: functions, basic blocks, SSA-style instructions and
// the whole-program call graph. Everything here is a plain value type; once a
// Program is constructed it is never mutated.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "blankit/error.hpp"

namespace blankit {

using FunctionId = int;
using BlockId = int;
using SiteId = int;

/// Functions smaller than this cannot hold a trampoline and stay loaded.
inline constexpr std::uint64_t kMinBlankableBytes = 14;

/// Operand of an instruction. Vars are SSA values local to one function;
/// function pointers are modelled as the integer id of the pointee.
struct ValueRef {
    enum class Kind { Var, Const, Param, FnAddr };

    Kind kind = Kind::Const;
    std::int64_t index = 0;
    std::variant<std::int64_t, double> constant = std::int64_t{0};

    static ValueRef var(std::int64_t id) { return {Kind::Var, id, std::int64_t{0}}; }
    static ValueRef param(std::int64_t i) { return {Kind::Param, i, std::int64_t{0}}; }
    static ValueRef fnaddr(FunctionId f) { return {Kind::FnAddr, f, std::int64_t{0}}; }
    static ValueRef int_const(std::int64_t v) { return {Kind::Const, 0, v}; }
    static ValueRef float_const(double v) { return {Kind::Const, 0, v}; }

    bool is_var() const { return kind == Kind::Var; }

    /// Numeric payload as seen by the predictor: constants by value, function
    /// pointers by function id. Vars and params have no static value.
    std::optional<double> static_value() const {
        switch (kind) {
            case Kind::Const:
                return std::visit([](auto v) { return static_cast<double>(v); }, constant);
            case Kind::FnAddr:
                return static_cast<double>(index);
            default:
                return std::nullopt;
        }
    }

    friend bool operator==(const ValueRef&, const ValueRef&) = default;
};

struct CallInstr {
    SiteId site = 0;
    FunctionId callee = 0;
    std::vector<ValueRef> args;
    friend bool operator==(const CallInstr&, const CallInstr&) = default;
};

struct PhiInstr {
    ValueRef dst;
    std::vector<std::pair<BlockId, ValueRef>> incomings;
    friend bool operator==(const PhiInstr&, const PhiInstr&) = default;
};

struct DefInstr {
    ValueRef dst;
    std::vector<ValueRef> operands;
    friend bool operator==(const DefInstr&, const DefInstr&) = default;
};

struct BranchInstr {
    ValueRef cond;
    friend bool operator==(const BranchInstr&, const BranchInstr&) = default;
};

using Instruction = std::variant<CallInstr, PhiInstr, DefInstr, BranchInstr>;

struct BasicBlock {
    BlockId id = 0;
    std::vector<Instruction> instructions;
    std::vector<BlockId> successors;
    friend bool operator==(const BasicBlock&, const BasicBlock&) = default;
};

struct FunctionDef {
    FunctionId id = 0;
    std::string name;
    std::uint64_t size_bytes = 0;
    std::uint64_t gadget_count = 0;
    bool instrumentable = true;
    bool blankable = true;
    bool is_library = false;
    BlockId entry_block = 0;
    std::vector<BasicBlock> blocks;

    const BasicBlock* find_block(BlockId b) const {
        for (const auto& bb : blocks)
            if (bb.id == b)
                return &bb;
        return nullptr;
    }

    /// p- and s-functions: never blanked, so always part of the exposed surface.
    bool permanently_loaded() const { return !instrumentable || !blankable; }

    friend bool operator==(const FunctionDef&, const FunctionDef&) = default;
};

struct CallEdge {
    FunctionId callee = 0;
    SiteId site = 0;
    friend auto operator<=>(const CallEdge&, const CallEdge&) = default;
};

/// caller -> ordered set of (callee, site). Callers without calls are present
/// with an empty set so iteration covers every function.
using CallGraph = std::map<FunctionId, std::set<CallEdge>>;

inline CallGraph derive_call_graph(const std::map<FunctionId, FunctionDef>& functions) {
    CallGraph graph;
    for (const auto& [id, fn] : functions) {
        auto& out = graph[id];
        for (const auto& bb : fn.blocks)
            for (const auto& ins : bb.instructions)
                if (const auto* call = std::get_if<CallInstr>(&ins))
                    out.insert({call->callee, call->site});
    }
    return graph;
}

class Program {
  public:
    Program() = default;

    explicit Program(std::vector<FunctionDef> fns) {
        for (auto& fn : fns) {
            FunctionId id = fn.id;
            if (functions_.count(id))
                fail(ErrorKind::InconsistentIds, "duplicate function id " + std::to_string(id));
            if (fn.is_library)
                library_ids_.insert(id);
            functions_.emplace(id, std::move(fn));
        }
        call_graph_ = derive_call_graph(functions_);
    }

    const std::map<FunctionId, FunctionDef>& functions() const { return functions_; }
    const std::set<FunctionId>& library_ids() const { return library_ids_; }
    const CallGraph& call_graph() const { return call_graph_; }

    const FunctionDef* find(FunctionId id) const {
        auto it = functions_.find(id);
        return it == functions_.end() ? nullptr : &it->second;
    }

    const FunctionDef& function(FunctionId id) const {
        if (const auto* fn = find(id))
            return *fn;
        fail(ErrorKind::InconsistentIds, "unknown function id " + std::to_string(id));
    }

    bool is_library(FunctionId id) const { return library_ids_.count(id) != 0; }

    std::set<FunctionId> permanent_library_functions() const {
        std::set<FunctionId> out;
        for (FunctionId id : library_ids_)
            if (functions_.at(id).permanently_loaded())
                out.insert(id);
        return out;
    }

    std::optional<FunctionId> find_by_name(const std::string& name) const {
        for (const auto& [id, fn] : functions_)
            if (fn.name == name)
                return id;
        return std::nullopt;
    }

  private:
    std::map<FunctionId, FunctionDef> functions_;
    std::set<FunctionId> library_ids_;
    CallGraph call_graph_;
};

namespace detail {

inline std::string where(const FunctionDef& fn) {
    return "function " + std::to_string(fn.id) + " (" + fn.name + ")";
}

inline std::string where(const FunctionDef& fn, const BasicBlock& bb) {
    return where(fn) + " block " + std::to_string(bb.id);
}

inline void collect_uses(const Instruction& ins, std::vector<ValueRef>& out) {
    std::visit(
        [&](const auto& i) {
            using T = std::decay_t<decltype(i)>;
            if constexpr (std::is_same_v<T, CallInstr>)
                out.insert(out.end(), i.args.begin(), i.args.end());
            else if constexpr (std::is_same_v<T, PhiInstr>)
                for (const auto& [b, v] : i.incomings)
                    out.push_back(v);
            else if constexpr (std::is_same_v<T, DefInstr>)
                out.insert(out.end(), i.operands.begin(), i.operands.end());
            else
                out.push_back(i.cond);
        },
        ins);
}

}  // namespace detail

/// Checks every structural invariant of the interchange format. Throws
/// Error(Schema) for malformed functions and Error(InconsistentIds) for
/// references to ids that do not exist.
inline void validate(const Program& program) {
    std::set<SiteId> sites;
    for (const auto& [id, fn] : program.functions()) {
        if (fn.blocks.empty())
            fail(ErrorKind::Schema, detail::where(fn) + " has no blocks");
        if (fn.size_bytes < kMinBlankableBytes && fn.blankable)
            fail(ErrorKind::Schema, detail::where(fn) + " is smaller than " +
                                        std::to_string(kMinBlankableBytes) +
                                        " bytes but marked blankable");
        std::set<BlockId> ids;
        for (const auto& bb : fn.blocks)
            if (!ids.insert(bb.id).second)
                fail(ErrorKind::Schema, detail::where(fn) + " has duplicate block id " +
                                            std::to_string(bb.id));
        if (!ids.count(fn.entry_block))
            fail(ErrorKind::Schema, detail::where(fn) + " entry block " +
                                        std::to_string(fn.entry_block) + " does not exist");

        std::map<std::int64_t, int> defs;
        for (const auto& bb : fn.blocks) {
            for (BlockId s : bb.successors)
                if (!ids.count(s))
                    fail(ErrorKind::Schema, detail::where(fn, bb) + " has dangling successor " +
                                                std::to_string(s));
            bool seen_non_phi = false;
            for (std::size_t i = 0; i < bb.instructions.size(); ++i) {
                const auto& ins = bb.instructions[i];
                if (std::holds_alternative<BranchInstr>(ins) && i + 1 != bb.instructions.size())
                    fail(ErrorKind::Schema, detail::where(fn, bb) + " branch is not last");
                if (const auto* phi = std::get_if<PhiInstr>(&ins)) {
                    if (seen_non_phi)
                        fail(ErrorKind::Schema,
                             detail::where(fn, bb) + " phi after non-phi instruction");
                    for (const auto& [from, v] : phi->incomings)
                        if (!ids.count(from))
                            fail(ErrorKind::Schema, detail::where(fn, bb) +
                                                        " phi incoming from unknown block " +
                                                        std::to_string(from));
                } else {
                    seen_non_phi = true;
                }
                const ValueRef* dst = nullptr;
                if (const auto* phi = std::get_if<PhiInstr>(&ins))
                    dst = &phi->dst;
                else if (const auto* def = std::get_if<DefInstr>(&ins))
                    dst = &def->dst;
                if (dst) {
                    if (!dst->is_var())
                        fail(ErrorKind::Schema, detail::where(fn, bb) + " defines a non-var value");
                    if (++defs[dst->index] > 1)
                        fail(ErrorKind::Schema, detail::where(fn) + " defines v" +
                                                    std::to_string(dst->index) + " twice");
                }
                if (const auto* call = std::get_if<CallInstr>(&ins)) {
                    if (!sites.insert(call->site).second)
                        fail(ErrorKind::InconsistentIds,
                             "call site " + std::to_string(call->site) + " is not unique");
                    if (!program.find(call->callee))
                        fail(ErrorKind::InconsistentIds, detail::where(fn, bb) +
                                                             " calls unknown function " +
                                                             std::to_string(call->callee));
                }
            }
        }
        for (const auto& bb : fn.blocks) {
            for (const auto& ins : bb.instructions) {
                std::vector<ValueRef> uses;
                detail::collect_uses(ins, uses);
                for (const auto& v : uses) {
                    if (v.is_var() && !defs.count(v.index))
                        fail(ErrorKind::Schema, detail::where(fn, bb) + " uses undefined v" +
                                                    std::to_string(v.index));
                    if (v.kind == ValueRef::Kind::FnAddr && !program.find(static_cast<int>(v.index)))
                        fail(ErrorKind::InconsistentIds, detail::where(fn, bb) +
                                                             " takes address of unknown function " +
                                                             std::to_string(v.index));
                }
            }
        }
    }
}

}  // namespace blankit
