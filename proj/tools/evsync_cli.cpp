// Command-line harness: `modelcheck` runs the abstract-machine model
// checker on a select-program; `demo` exercises the live event library in
// scripted scenarios; `stress` runs randomized symmetric-choose workloads
// that are deadlock-free by construction, so any timeout is a defect.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "evsync/cell.hpp"
#include "evsync/events.hpp"
#include "evsync/guarded.hpp"
#include "evsync/machine.hpp"
#include "evsync/progdsl.hpp"

namespace {

using namespace evsync;
namespace model = evsync::model;

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitParse = 2;
constexpr int kExitBound = 3;

// ---------------------------------------------------------------------- //
// modelcheck

int cmd_modelcheck(const std::string& source, std::size_t max_states) {
    dsl::Program prog;
    try {
        prog = dsl::parse_program(source);
    } catch (const dsl::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitParse;
    }

    model::ChannelTable table = model::channel_table(prog);
    model::MachineState init = model::compile(prog, table);

    std::cout << "program: " << dsl::format_program(prog) << "\n";
    std::cout << "channels: " << table.names.size() << "\n";
    std::cout << "compiled: " << model::format_state(init, table) << "\n";

    model::ReachGraph g = model::explore(init, max_states);
    std::cout << "explored_states: " << g.states.size() << "\n";
    if (g.truncated) {
        std::cerr << "state bound exceeded (max_states=" << max_states << ")\n";
        std::cout << "bound_exceeded: true\n";
        return kExitBound;
    }

    std::size_t invariant_violations = 0;
    for (const auto& st : g.states)
        invariant_violations += model::check_invariants(st).size();
    std::cout << "invariant_violations: " << invariant_violations << "\n";

    auto liveness = model::check_channel_liveness(g);
    std::cout << "liveness_violations: " << liveness.size() << "\n";

    std::cout << "terminal_states: " << g.terminals.size() << "\n";
    for (std::uint32_t t : g.terminals)
        std::cout << "terminal_denotation: "
                  << model::format_denotation(model::denote_state(g.states[t]), table)
                  << "\n";

    model::BisimReport rep = model::verify_theorem(prog, g, table);
    std::cout << "correspondence: " << (rep.correspondence_root ? "pass" : "fail") << "\n";
    std::cout << "safety: " << (rep.safety_root ? "pass" : "fail") << "\n";
    std::cout << "progress: " << (rep.progress_root ? "pass" : "fail") << "\n";

    bool ok = rep.pass && invariant_violations == 0 && liveness.empty();
    std::cout << "verdict: " << (ok ? "pass" : "fail") << "\n";
    if (!ok && !rep.detail.empty()) std::cerr << rep.detail << "\n";
    return ok ? kExitPass : kExitFail;
}

// ---------------------------------------------------------------------- //
// demo

struct Scenario {
    const char* name;
    std::function<bool()> run;
};

bool scenario_rendezvous() {
    auto c = new_channel<int>();
    spawn_detached([c] { send(c, 42); });
    return accept(c) == 42;
}

bool scenario_symmetric_choose() {
    auto c = new_channel<int>();
    auto d = new_channel<int>();
    Cell<bool> done_a, done_b;
    auto as_int = [](Unit) { return 0; };
    spawn_detached([c, d, done_a, as_int]() mutable {
        sync(choose<int>({wrap(transmit(c, 1), as_int), receive(d)}));
        done_a.put(true);
    });
    spawn_detached([c, d, done_b, as_int]() mutable {
        sync(choose<int>({receive(c), wrap(transmit(d, 2), as_int)}));
        done_b.put(true);
    });
    return done_a.get() && done_b.get();
}

bool scenario_wrapabort() {
    auto c = new_channel<int>();
    auto d = new_channel<int>();
    Cell<int> fired; // abort actions report their branch id here
    spawn_detached([c] { send(c, 7); });
    int v = sync(choose<int>({
        wrapabort<int>([fired]() mutable { fired.put(1); }, receive(c)),
        wrapabort<int>([fired]() mutable { fired.put(2); }, receive(d)),
    }));
    if (v != 7) return false;
    auto first = fired.get_timeout(std::chrono::milliseconds(2000));
    if (!first || *first != 2) return false; // losing branch fires once
    auto second = fired.get_timeout(std::chrono::milliseconds(200));
    return !second; // winning branch never fires
}

bool scenario_guard_counting() {
    auto c = new_channel<int>();
    auto counter = std::make_shared<std::atomic<int>>(0);
    spawn_detached([c] { send(c, 5); });
    int v = sync(guard<int>([c, counter] {
        counter->fetch_add(1);
        return receive(c);
    }));
    return v == 5 && counter->load() == 1;
}

bool scenario_guarded_receive() {
    auto c = new_gchannel<int>();
    spawn_detached([c] { sync(transmit(c, 3)); });
    spawn_detached([c] { sync(transmit(c, 8)); });
    int v = sync(receive_if<int>(c, [](const int& x) { return x % 2 == 0; }));
    return v == 8;
}

int cmd_demo(long timeout_ms, unsigned long seed) {
    std::vector<Scenario> scenarios = {
        {"rendezvous", scenario_rendezvous},
        {"symmetric_choose", scenario_symmetric_choose},
        {"wrapabort", scenario_wrapabort},
        {"guard_counting", scenario_guard_counting},
        {"guarded_receive", scenario_guarded_receive},
    };
    std::mt19937_64 rng(seed);
    std::shuffle(scenarios.begin(), scenarios.end(), rng);

    std::cout << "seed: " << seed << "\n";
    std::cout << "timeout_ms: " << timeout_ms << "\n";
    bool all = true;
    for (const Scenario& sc : scenarios) {
        Cell<bool> result;
        spawn_detached([run = sc.run, result]() mutable { result.put(run()); });
        auto r = result.get_timeout(std::chrono::milliseconds(timeout_ms));
        const char* verdict = !r ? "timeout" : (*r ? "pass" : "fail");
        std::cout << "scenario " << sc.name << ": " << verdict << "\n";
        if (!r || !*r) all = false;
    }
    std::cout << "verdict: " << (all ? "pass" : "fail") << "\n";
    return all ? kExitPass : kExitFail;
}

// ---------------------------------------------------------------------- //
// stress

int cmd_stress(long tasks, long channels, long timeout_ms, unsigned long seed) {
    if (tasks < 2) tasks = 2;
    if (tasks % 2) ++tasks; // sender/receiver pairs
    if (channels < 1) channels = 1;

    std::mt19937_64 rng(seed);
    std::cout << "seed: " << seed << "\n";
    std::cout << "tasks: " << tasks << "\n";
    std::cout << "channels: " << channels << "\n";
    std::cout << "timeout_ms: " << timeout_ms << "\n";

    std::vector<Channel<int>> chans;
    for (long i = 0; i < channels; ++i) chans.push_back(new_channel<int>());

    // Partition the channels into disjoint buckets of 1-3. Every task group
    // chooses over ALL channels of one bucket with equal sender/receiver
    // counts, so within a bucket the availability graph is complete
    // bipartite and balanced: any sequence of commits leaves a perfect
    // matching for the rest. Buckets never share channels, hence no
    // cross-bucket interference. Completion is therefore guaranteed.
    std::vector<std::vector<Channel<int>>> buckets;
    {
        std::vector<std::size_t> order(chans.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t i = 0;
        while (i < order.size()) {
            std::size_t k = 1 + rng() % 3;
            std::vector<Channel<int>> b;
            for (std::size_t j = 0; j < k && i < order.size(); ++j, ++i)
                b.push_back(chans[order[i]]);
            buckets.push_back(std::move(b));
        }
    }

    auto done = std::make_shared<std::atomic<long>>(0);
    auto attempts = std::make_shared<std::atomic<long>>(0);

    long remaining = tasks;
    while (remaining > 0) {
        long g = 1 + static_cast<long>(rng() % 3);
        if (2 * g > remaining) g = remaining / 2;
        remaining -= 2 * g;
        const auto& bucket = buckets[rng() % buckets.size()];
        for (long i = 0; i < g; ++i) {
            spawn_detached([bucket, done, attempts] {
                std::vector<Event<int>> branches;
                for (const auto& ch : bucket)
                    branches.push_back(wrap(transmit(ch, 1), [](Unit) { return 0; }));
                Event<int> ev = choose<int>(branches);
                sync(guard<int>([ev, attempts] {
                    attempts->fetch_add(1);
                    return ev;
                }));
                done->fetch_add(1);
            });
            spawn_detached([bucket, done, attempts] {
                std::vector<Event<int>> branches;
                for (const auto& ch : bucket) branches.push_back(receive(ch));
                Event<int> ev = choose<int>(branches);
                sync(guard<int>([ev, attempts] {
                    attempts->fetch_add(1);
                    return ev;
                }));
                done->fetch_add(1);
            });
        }
    }

    auto start = std::chrono::steady_clock::now();
    auto deadline = start + std::chrono::milliseconds(timeout_ms);
    while (done->load() < tasks && std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(std::chrono::milliseconds(2));

    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - start)
                       .count();
    long completed = done->load();
    std::cout << "completed: " << completed << "\n";
    std::cout << "elapsed_ms: " << elapsed << "\n";
    std::cout << "sync_attempts: " << attempts->load() << "\n";
    std::cout << "retries: " << attempts->load() - completed << "\n";
    if (elapsed > 0)
        std::cout << "throughput_per_s: " << (completed * 1000) / elapsed << "\n";
    bool ok = completed == tasks;
    std::cout << "verdict: " << (ok ? "pass" : "fail") << "\n";
    if (!ok) std::cerr << "timeout: only " << completed << "/" << tasks << " completed\n";
    return ok ? kExitPass : kExitFail;
}

std::string read_source(const std::string& path) {
    if (path.empty() || path == "-") {
        std::ostringstream ss;
        ss << std::cin.rdbuf();
        return ss.str();
    }
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"first-class synchronous events: model checker and live demos"};
    app.require_subcommand(1);

    std::string file = "-";
    std::size_t max_states = 100000;
    auto* mc = app.add_subcommand("modelcheck", "check a select-program");
    mc->add_option("--max-states", max_states, "state bound");
    mc->add_option("file", file, "program file, or - for stdin");

    long demo_timeout = 5000;
    unsigned long demo_seed = 0;
    auto* dm = app.add_subcommand("demo", "scripted library scenarios");
    dm->add_option("--timeout", demo_timeout, "per-scenario timeout (ms)");
    dm->add_option("--seed", demo_seed, "scenario-order seed");

    long st_tasks = 200, st_channels = 50, st_timeout = 30000;
    unsigned long st_seed = 0;
    auto* ss = app.add_subcommand("stress", "randomized symmetric-choose stress");
    ss->add_option("--tasks", st_tasks, "number of tasks");
    ss->add_option("--channels", st_channels, "number of channels");
    ss->add_option("--timeout", st_timeout, "wall-clock timeout (ms)");
    ss->add_option("--seed", st_seed, "workload seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (mc->parsed()) return cmd_modelcheck(read_source(file), max_states);
        if (dm->parsed()) return cmd_demo(demo_timeout, demo_seed);
        if (ss->parsed()) return cmd_stress(st_tasks, st_channels, st_timeout, st_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitParse;
    }
    return kExitPass;
}
