#include "ifcvm/assembler.hpp"
#include "ifcvm/cfg.hpp"
#include "ifcvm/interpreter.hpp"
#include "ifcvm/minijs.hpp"
#include "ifcvm/ni.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIfcHalt = 3;
constexpr int kExitUncaught = 4;
constexpr int kExitNiFailure = 5;

std::string readFile(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool endsWith(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ifcvm::Program loadProgram(const std::string& path, const std::string& domain) {
    if (endsWith(path, ".ifcasm"))
        return ifcvm::parseAssembly(readFile(path));
    ifcvm::minijs::CompileOptions options;
    options.domain = domain;
    return ifcvm::minijs::compile(readFile(path), options);
}

struct InputSpec {
    std::string name;
    std::string valueText;
    std::string labelText;
};

// --input name=value:label ; value is an integer, true/false, or a quoted
// string; label uses the textual label syntax.
InputSpec parseInputSpec(const std::string& text) {
    auto eq = text.find('=');
    if (eq == std::string::npos)
        throw std::runtime_error("--input needs name=value:label");
    InputSpec spec;
    spec.name = text.substr(0, eq);
    std::string rest = text.substr(eq + 1);
    auto colon = rest.rfind(':');
    if (colon == std::string::npos) {
        spec.valueText = rest;
        spec.labelText = "low";
    } else {
        spec.valueText = rest.substr(0, colon);
        spec.labelText = rest.substr(colon + 1);
    }
    return spec;
}

ifcvm::Value parseValueText(const std::string& text) {
    if (text == "true")
        return true;
    if (text == "false")
        return false;
    if (text == "undefined")
        return ifcvm::Undefined{};
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"')
        return text.substr(1, text.size() - 2);
    try {
        size_t used = 0;
        int64_t n = std::stoll(text, &used);
        if (used == text.size())
            return n;
    } catch (...) {
    }
    return text; // bare word: treat as a string
}

int mapHaltToExit(ifcvm::HaltReason reason) {
    switch (reason) {
    case ifcvm::HaltReason::IfcStarUse:
    case ifcvm::HaltReason::IfcScopeViolation:
    case ifcvm::HaltReason::IfcHeapStarWrite:
        return kExitIfcHalt;
    case ifcvm::HaltReason::UncaughtException:
    case ifcvm::HaltReason::RuntimeTypeError:
        return kExitUncaught;
    }
    return kExitUsage;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"instrumented bytecode interpreter with dynamic information-flow control"};
    app.require_subcommand(1);

    // compile
    auto* compileCmd = app.add_subcommand("compile", "compile a source file to assembly");
    std::string compileSrc, compileOut, compileDomain;
    compileCmd->add_option("src", compileSrc, "source file (.mjs-ifc)")->required();
    compileCmd->add_option("-o,--output", compileOut, "output file (default: stdout)");
    compileCmd->add_option("--domain", compileDomain, "origin domain annotation");

    // asm
    auto* asmCmd = app.add_subcommand("asm", "validate an assembly file and echo it");
    std::string asmPath;
    asmCmd->add_option("file", asmPath, "assembly file (.ifcasm)")->required();

    // run
    auto* runCmd = app.add_subcommand("run", "execute a program");
    std::string runPath, runIfc = "deferred", runObserver = "low", runDomain;
    std::vector<std::string> runInputs;
    bool runSparse = false, runTrace = false, runStats = false, runInvariants = false;
    uint64_t runMaxSteps = 50'000'000;
    runCmd->add_option("file", runPath, "program (.mjs-ifc or .ifcasm)")->required();
    runCmd->add_option("--input", runInputs, "labeled global: name=value:label");
    runCmd->add_option("--ifc", runIfc, "monitor mode: off | deferred")
        ->check(CLI::IsMember({"off", "deferred"}));
    runCmd->add_flag("--sparse", runSparse, "sparse labeling fast path");
    runCmd->add_flag("--trace", runTrace, "per-step trace on stdout");
    runCmd->add_flag("--stats", runStats, "print instruction and join counters");
    runCmd->add_flag("--check-invariants", runInvariants, "per-step debug assertions");
    runCmd->add_option("--observer", runObserver, "observer label for the dump");
    runCmd->add_option("--max-steps", runMaxSteps, "step budget");
    runCmd->add_option("--domain", runDomain, "origin domain annotation when compiling");

    // analyze
    auto* analyzeCmd = app.add_subcommand("analyze", "dump CFGs and IPD tables");
    std::string analyzePath, analyzeVariant = "plain";
    bool analyzeDump = false, analyzeDot = false;
    analyzeCmd->add_option("file", analyzePath, "program (.mjs-ifc or .ifcasm)")->required();
    analyzeCmd->add_flag("--dump-cfg", analyzeDump, "print CFG adjacency and IPD table");
    analyzeCmd->add_option("--variant", analyzeVariant, "plain | handler")
        ->check(CLI::IsMember({"plain", "handler"}));
    analyzeCmd->add_flag("--dot", analyzeDot, "emit Graphviz instead of plain text");

    // ni-check
    auto* niCmd = app.add_subcommand("ni-check", "run a differential NI suite");
    std::string niManifest, niIfc = "deferred", niJsonOut;
    bool niLockstep = false, niSparse = false;
    uint64_t niMaxSteps = 20'000'000;
    niCmd->add_option("manifest", niManifest, "case manifest (JSON)")->required();
    niCmd->add_option("--ifc", niIfc, "monitor mode: off | deferred")
        ->check(CLI::IsMember({"off", "deferred"}));
    niCmd->add_flag("--lockstep", niLockstep, "epoch-trace lockstep checking");
    niCmd->add_flag("--sparse", niSparse, "sparse labeling fast path");
    niCmd->add_option("--summary-json", niJsonOut, "write a JSON summary to a file");
    niCmd->add_option("--max-steps", niMaxSteps, "per-run step budget");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*compileCmd) {
            ifcvm::minijs::CompileOptions options;
            options.domain = compileDomain;
            ifcvm::Program program = ifcvm::minijs::compile(readFile(compileSrc), options);
            std::string text = ifcvm::serializeAssembly(program);
            if (compileOut.empty()) {
                std::cout << text;
            } else {
                std::ofstream out(compileOut);
                out << text;
            }
            return kExitOk;
        }

        if (*asmCmd) {
            ifcvm::Program program = ifcvm::parseAssembly(readFile(asmPath));
            auto diags = ifcvm::validate(program);
            for (const auto& d : diags)
                std::cerr << d.str() << "\n";
            if (!diags.empty())
                return kExitUsage;
            std::cout << ifcvm::serializeAssembly(program);
            return kExitOk;
        }

        if (*runCmd) {
            ifcvm::Program program = loadProgram(runPath, runDomain);
            auto registry = std::make_shared<ifcvm::DomainRegistry>();
            ifcvm::MachineConfig config;
            config.ifcMode = runIfc == "off" ? ifcvm::IfcMode::Off : ifcvm::IfcMode::Deferred;
            config.sparse = runSparse;
            config.checkInvariants = runInvariants;
            if (runTrace)
                config.traceStream = &std::cout;
            ifcvm::Machine machine(std::move(program), config, registry);
            for (const std::string& text : runInputs) {
                InputSpec spec = parseInputSpec(text);
                machine.setGlobalInput(spec.name, {parseValueText(spec.valueText),
                                                   registry->parse(spec.labelText)});
            }
            ifcvm::Label observer = registry->parse(runObserver);
            ifcvm::RunStatus status = machine.run(runMaxSteps);
            if (status == ifcvm::RunStatus::Running) {
                std::cerr << "error: step budget exceeded\n";
                return kExitUsage;
            }
            std::cout << machine.dumpState(observer);
            if (runStats)
                std::cout << "instructions=" << machine.stats().instructions
                          << " joins=" << machine.stats().labelJoins << "\n";
            if (status == ifcvm::RunStatus::Halted) {
                auto reason = *machine.haltReason();
                std::cerr << "halt: " << ifcvm::haltReasonName(reason);
                if (!machine.haltDetail().empty())
                    std::cerr << " (" << machine.haltDetail() << ")";
                // The exception message stays hidden from low observers.
                if ((reason == ifcvm::HaltReason::UncaughtException ||
                     reason == ifcvm::HaltReason::RuntimeTypeError) &&
                    machine.haltMessage().label.visibleTo(observer))
                    std::cerr << ": " << ifcvm::valueToDisplayString(machine.haltMessage().value);
                std::cerr << "\n";
                return mapHaltToExit(reason);
            }
            return kExitOk;
        }

        if (*analyzeCmd) {
            ifcvm::Program program = loadProgram(analyzePath, "");
            bool handler = analyzeVariant == "handler";
            for (size_t i = 0; i < program.blocks.size(); ++i) {
                ifcvm::Cfg cfg = ifcvm::buildCfg(program.blocks[i], handler);
                std::cout << ifcvm::dumpCfg(cfg, program.blocks[i], analyzeDot);
            }
            (void)analyzeDump;
            return kExitOk;
        }

        if (*niCmd) {
            std::vector<ifcvm::NiCase> cases = ifcvm::loadManifest(niManifest);
            ifcvm::NiCheckOptions options;
            options.mode = niIfc == "off" ? ifcvm::IfcMode::Off : ifcvm::IfcMode::Deferred;
            options.lockstep = niLockstep;
            options.sparse = niSparse;
            options.maxSteps = niMaxSteps;
            bool offMode = options.mode == ifcvm::IfcMode::Off;
            std::vector<ifcvm::NiReportEntry> entries;
            bool allExpected = true;
            for (const ifcvm::NiCase& c : cases) {
                ifcvm::NiReportEntry entry;
                entry.name = c.name;
                entry.verdict = ifcvm::checkNI(c, options);
                const std::string& expectation = offMode ? c.expectOff : c.expect;
                if (!expectation.empty())
                    entry.asExpected = entry.verdict.pass == (expectation == "pass");
                allExpected = allExpected && entry.asExpected;
                entries.push_back(std::move(entry));
            }
            std::cout << ifcvm::renderReport(entries);
            if (!niJsonOut.empty()) {
                std::ofstream out(niJsonOut);
                out << ifcvm::renderReportJson(entries);
            }
            return allExpected ? kExitOk : kExitNiFailure;
        }
    } catch (const ifcvm::AsmError& e) {
        std::cerr << "parse error at " << e.line << ":" << e.column << ": " << e.what()
                  << "\n";
        return kExitUsage;
    } catch (const ifcvm::minijs::ParseError& e) {
        std::cerr << "parse error at " << e.line << ":" << e.column << ": " << e.what()
                  << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
