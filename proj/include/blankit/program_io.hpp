#pragma once

// Program JSON interchange. One document per program:
//   {"functions":[{"id":..,"name":..,"blocks":[{"id":..,"succs":[..],"instrs":[..]}]}]}
// valueref is {"v":int} | {"const":number} | {"param":int} | {"fnaddr":int}.

#include <filesystem>
#include <string>

#include "blankit/io.hpp"
#include "blankit/ir.hpp"

namespace blankit {

inline json to_json(const ValueRef& v) {
    switch (v.kind) {
        case ValueRef::Kind::Var: return json{{"v", v.index}};
        case ValueRef::Kind::Param: return json{{"param", v.index}};
        case ValueRef::Kind::FnAddr: return json{{"fnaddr", v.index}};
        case ValueRef::Kind::Const:
            if (const auto* i = std::get_if<std::int64_t>(&v.constant))
                return json{{"const", *i}};
            return json{{"const", std::get<double>(v.constant)}};
    }
    return json{};
}

inline ValueRef value_ref_from_json(const json& j, const std::string& ctx) {
    if (!j.is_object() || j.size() != 1)
        fail(ErrorKind::Schema, ctx + ": valueref must be an object with one key");
    if (j.contains("v"))
        return ValueRef::var(get_field<std::int64_t>(j, "v", ctx));
    if (j.contains("param"))
        return ValueRef::param(get_field<std::int64_t>(j, "param", ctx));
    if (j.contains("fnaddr"))
        return ValueRef::fnaddr(get_field<int>(j, "fnaddr", ctx));
    if (j.contains("const")) {
        const auto& c = j.at("const");
        if (c.is_number_integer())
            return ValueRef::int_const(c.get<std::int64_t>());
        if (c.is_number())
            return ValueRef::float_const(c.get<double>());
        fail(ErrorKind::Schema, ctx + ": const must be a number");
    }
    fail(ErrorKind::Schema, ctx + ": unknown valueref kind " + j.dump());
}

inline json to_json(const Instruction& ins) {
    return std::visit(
        [](const auto& i) -> json {
            using T = std::decay_t<decltype(i)>;
            if constexpr (std::is_same_v<T, CallInstr>) {
                json args = json::array();
                for (const auto& a : i.args)
                    args.push_back(to_json(a));
                return {{"op", "call"}, {"site", i.site}, {"callee", i.callee}, {"args", args}};
            } else if constexpr (std::is_same_v<T, PhiInstr>) {
                json in = json::array();
                for (const auto& [b, v] : i.incomings)
                    in.push_back(json::array({b, to_json(v)}));
                return {{"op", "phi"}, {"dst", to_json(i.dst)}, {"in", in}};
            } else if constexpr (std::is_same_v<T, DefInstr>) {
                json src = json::array();
                for (const auto& v : i.operands)
                    src.push_back(to_json(v));
                return {{"op", "def"}, {"dst", to_json(i.dst)}, {"src", src}};
            } else {
                return {{"op", "branch"}, {"cond", to_json(i.cond)}};
            }
        },
        ins);
}

inline Instruction instruction_from_json(const json& j, const std::string& ctx) {
    auto op = get_field<std::string>(j, "op", ctx);
    auto values = [&](const char* key) {
        std::vector<ValueRef> out;
        const auto arr = get_field<json>(j, key, ctx);
        if (!arr.is_array())
            fail(ErrorKind::Schema, ctx + ": '" + key + "' must be an array");
        for (const auto& v : arr)
            out.push_back(value_ref_from_json(v, ctx));
        return out;
    };
    if (op == "call")
        return CallInstr{get_field<int>(j, "site", ctx), get_field<int>(j, "callee", ctx),
                         values("args")};
    if (op == "def")
        return DefInstr{value_ref_from_json(get_field<json>(j, "dst", ctx), ctx), values("src")};
    if (op == "branch")
        return BranchInstr{value_ref_from_json(get_field<json>(j, "cond", ctx), ctx)};
    if (op == "phi") {
        PhiInstr phi{value_ref_from_json(get_field<json>(j, "dst", ctx), ctx), {}};
        for (const auto& pair : get_field<json>(j, "in", ctx)) {
            if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer())
                fail(ErrorKind::Schema, ctx + ": phi incoming must be [blockid, valueref]");
            phi.incomings.emplace_back(pair[0].get<int>(), value_ref_from_json(pair[1], ctx));
        }
        return phi;
    }
    fail(ErrorKind::Schema, ctx + ": unknown op '" + op + "'");
}

inline json to_json(const FunctionDef& fn) {
    json blocks = json::array();
    for (const auto& bb : fn.blocks) {
        json instrs = json::array();
        for (const auto& ins : bb.instructions)
            instrs.push_back(to_json(ins));
        blocks.push_back({{"id", bb.id}, {"succs", bb.successors}, {"instrs", instrs}});
    }
    return {{"id", fn.id},
            {"name", fn.name},
            {"size_bytes", fn.size_bytes},
            {"gadget_count", fn.gadget_count},
            {"instrumentable", fn.instrumentable},
            {"blankable", fn.blankable},
            {"is_library", fn.is_library},
            {"entry_block", fn.entry_block},
            {"blocks", blocks}};
}

inline FunctionDef function_from_json(const json& j) {
    FunctionDef fn;
    fn.id = get_field<int>(j, "id", "function");
    const std::string ctx = "function " + std::to_string(fn.id);
    fn.name = get_field<std::string>(j, "name", ctx);
    fn.size_bytes = get_field<std::uint64_t>(j, "size_bytes", ctx);
    fn.gadget_count = get_field<std::uint64_t>(j, "gadget_count", ctx);
    fn.instrumentable = get_field<bool>(j, "instrumentable", ctx);
    fn.blankable = get_field<bool>(j, "blankable", ctx);
    fn.is_library = get_field<bool>(j, "is_library", ctx);
    fn.entry_block = get_field<int>(j, "entry_block", ctx);
    for (const auto& jb : get_field<json>(j, "blocks", ctx)) {
        BasicBlock bb;
        bb.id = get_field<int>(jb, "id", ctx);
        const std::string bctx = ctx + " block " + std::to_string(bb.id);
        bb.successors = get_field<std::vector<int>>(jb, "succs", bctx);
        for (const auto& ji : get_field<json>(jb, "instrs", bctx))
            bb.instructions.push_back(instruction_from_json(ji, bctx));
        fn.blocks.push_back(std::move(bb));
    }
    return fn;
}

inline json to_json(const Program& program) {
    json fns = json::array();
    for (const auto& [id, fn] : program.functions())
        fns.push_back(to_json(fn));
    return {{"functions", fns}};
}

/// Parses and validates. A Program returned from here satisfies every
/// invariant checked by validate().
inline Program program_from_json(const json& doc) {
    if (!doc.is_object() || !doc.contains("functions") || !doc.at("functions").is_array())
        fail(ErrorKind::Schema, "program: expected {\"functions\": [...]}");
    std::vector<FunctionDef> fns;
    for (const auto& j : doc.at("functions"))
        fns.push_back(function_from_json(j));
    Program program(std::move(fns));
    validate(program);
    return program;
}

inline Program load_program(const std::filesystem::path& path) {
    return program_from_json(read_json_file(path));
}

inline void save_program(const std::filesystem::path& path, const Program& program) {
    write_json_file(path, to_json(program));
}

}  // namespace blankit
