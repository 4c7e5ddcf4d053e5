// Acceptance suite: one pass/fail line per criterion. Heavy concurrent
// workloads run in child processes (re-invocations of this binary or the
// CLI) so each stays within the OS task budget; the runtime leaves
// permanently blocked junk threads behind by design, and process exit is
// their only reclamation point.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>

#include "evsync/cell.hpp"
#include "evsync/events.hpp"
#include "evsync/guarded.hpp"
#include "evsync/machine.hpp"
#include "evsync/progdsl.hpp"

using namespace evsync;
namespace model = evsync::model;
using Clock = std::chrono::steady_clock;
using namespace std::chrono_literals;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct CmdResult {
    int exit_code = -1;
    std::string out;
};

CmdResult run_cmd(const std::string& cmd) {
    CmdResult r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    int status = pclose(p);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

template <class F>
auto async_result(F f) {
    using T = decltype(f());
    Cell<T> out;
    spawn_detached([out, f]() mutable { out.put(f()); });
    return out;
}

int g_failures = 0;

void report(int criterion, bool ok, const std::string& note) {
    std::cout << "criterion " << criterion << ": " << (ok ? "pass" : "FAIL")
              << " — " << note << "\n"
              << std::flush;
    if (!ok) ++g_failures;
}

// ------------------------------------------------------------------- //
// Criterion 1: the model checker reproduces the four-way select example.

void criterion_1() {
    auto t0 = Clock::now();
    CmdResult r = run_cmd(
        std::string("printf '%s' 'select(!x,!y) | select(y,z) | select(!z) | "
                    "select(x)' | ") +
        EVSYNC_CLI_PATH + " modelcheck -");
    double dt = seconds_since(t0);
    std::set<std::string> dens;
    long explored = -1;
    std::istringstream is(r.out);
    std::string line;
    while (std::getline(is, line)) {
        if (line.rfind("terminal_denotation: ", 0) == 0)
            dens.insert(line.substr(21));
        if (line.rfind("explored_states: ", 0) == 0)
            explored = std::stol(line.substr(17));
    }
    bool ok = r.exit_code == 0 && dt < 5.0 && explored > 0 && explored < 100000 &&
              dens == std::set<std::string>{"{x,!x,z,!z}", "{y,!y}"};
    std::ostringstream note;
    note << "terminal denotations {x,!x,z,!z} and {y,!y}; " << explored
         << " states in " << dt << " s (exit " << r.exit_code << ")";
    report(1, ok, note.str());
}

// ------------------------------------------------------------------- //
// Criteria 2-4: exhaustive program family (<= 3 channels, <= 4 procs,
// <= 2 actions per select, one representative per channel-renaming class):
// reachable-state invariants, the bounded refinement verdicts, and channel
// liveness, all in one sweep.

void criteria_2_3_4() {
    auto t0 = Clock::now();
    const char* chans[3] = {"a", "b", "c"};
    std::vector<dsl::Action> acts;
    for (int c = 0; c < 3; ++c)
        for (int o = 0; o < 2; ++o) acts.push_back({chans[c], o == 1});
    std::vector<dsl::SourceProc> procs;
    for (const auto& a : acts) procs.push_back({false, {a}});
    for (const auto& a : acts) procs.push_back({true, {a}});
    for (std::size_t i = 0; i < acts.size(); ++i)
        for (std::size_t j = i; j < acts.size(); ++j)
            procs.push_back({true, {acts[i], acts[j]}});

    int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    auto rename = [&](const dsl::Program& p, const int* pm) {
        dsl::Program q = p;
        for (auto& pr : q.procs)
            for (auto& a : pr.actions) a.channel = chans[pm[a.channel[0] - 'a']];
        return q;
    };

    std::size_t classes = 0, states = 0;
    std::size_t invariant_violations = 0, theorem_failures = 0, liveness_violations = 0,
                truncations = 0;
    std::string first_bad;

    auto run_one = [&](const dsl::Program& prog) {
        std::string self = dsl::format_program(model::canonical_program(prog));
        for (auto& pm : perms)
            if (dsl::format_program(model::canonical_program(rename(prog, pm))) < self)
                return; // another member represents this renaming class
        ++classes;
        model::ChannelTable table = model::channel_table(prog);
        model::ReachGraph g = model::explore(model::compile(prog, table), 1000000);
        if (g.truncated) {
            ++truncations;
            if (first_bad.empty()) first_bad = self + " (truncated)";
            return;
        }
        states += g.states.size();
        for (const auto& st : g.states) {
            auto v = model::check_invariants(st);
            invariant_violations += v.size();
            if (!v.empty() && first_bad.empty()) first_bad = self + ": " + v.front();
        }
        auto lv = model::check_channel_liveness(g);
        liveness_violations += lv.size();
        if (!lv.empty() && first_bad.empty()) first_bad = self + " (liveness)";
        model::BisimReport rep = model::verify_theorem(prog, g, table);
        if (!rep.pass) {
            ++theorem_failures;
            if (first_bad.empty()) first_bad = self + ": " + rep.detail;
        }
    };

    std::vector<std::size_t> pick;
    auto rec = [&](auto&& selfr, std::size_t start, std::size_t depth) -> void {
        if (depth > 0) {
            dsl::Program p;
            for (std::size_t i : pick) p.procs.push_back(procs[i]);
            run_one(p);
        }
        if (depth == 4) return;
        for (std::size_t i = start; i < procs.size(); ++i) {
            pick.push_back(i);
            selfr(selfr, i, depth + 1);
            pick.pop_back();
        }
    };
    rec(rec, 0, 0);
    double dt = seconds_since(t0);

    {
        std::ostringstream note;
        note << invariant_violations << " invariant violations across " << classes
             << " programs / " << states << " states in " << dt << " s";
        if (!first_bad.empty()) note << "; first: " << first_bad;
        report(2, invariant_violations == 0 && truncations == 0 && dt < 300.0,
               note.str());
    }
    {
        std::ostringstream note;
        note << theorem_failures
             << " refinement failures (correspondence/safety/progress) across "
             << classes << " programs; bounded check, not a full proof";
        report(3, theorem_failures == 0 && truncations == 0, note.str());
    }
    {
        std::ostringstream note;
        note << liveness_violations
             << " states with complementary unmatched points and no reachable "
                "free-channel state";
        report(4, liveness_violations == 0 && truncations == 0, note.str());
    }
}

// ------------------------------------------------------------------- //
// Criterion 5: 1,000 live send/accept pairs on 100 channels (child process).

int child_pairs(int npairs, int nchan, bool guarded) {
    std::mutex m;
    std::multiset<int> received;
    auto done = std::make_shared<std::atomic<int>>(0);
    auto always = [](const int&) { return true; };
    if (!guarded) {
        std::vector<Channel<int>> cs;
        for (int i = 0; i < nchan; ++i) cs.push_back(new_channel<int>());
        for (int i = 0; i < npairs; ++i) {
            auto c = cs[i % nchan];
            spawn_detached([c, i]() mutable { send(c, i); });
            spawn_detached([&, c, done]() mutable {
                int v = accept(c);
                {
                    std::lock_guard<std::mutex> lock(m);
                    received.insert(v);
                }
                done->fetch_add(1);
            });
        }
    } else {
        std::vector<GChannel<int>> cs;
        for (int i = 0; i < nchan; ++i) cs.push_back(new_gchannel<int>());
        for (int i = 0; i < npairs; ++i) {
            auto c = cs[i % nchan];
            spawn_detached([c, i]() mutable { sync(transmit(c, i)); });
            spawn_detached([&, c, done, always]() mutable {
                int v = sync(receive_if<int>(c, always));
                {
                    std::lock_guard<std::mutex> lock(m);
                    received.insert(v);
                }
                done->fetch_add(1);
            });
        }
    }
    auto deadline = Clock::now() + 10s;
    while (done->load() < npairs && Clock::now() < deadline)
        std::this_thread::sleep_for(2ms);
    if (done->load() < npairs) {
        std::cerr << "pairs: only " << done->load() << "/" << npairs << "\n";
        return 1;
    }
    std::lock_guard<std::mutex> lock(m);
    std::multiset<int> expected;
    for (int i = 0; i < npairs; ++i) expected.insert(i);
    return received == expected ? 0 : 1;
}

void criterion_5() {
    auto t0 = Clock::now();
    CmdResult r = run_cmd(std::string(EVSYNC_SELF_PATH) + " --child pairs 1000 100");
    double dt = seconds_since(t0);
    std::ostringstream note;
    note << "1000 pairs on 100 channels, multiset(sent) == multiset(received), "
         << dt << " s";
    report(5, r.exit_code == 0 && dt < 10.0, note.str());
}

// ------------------------------------------------------------------- //
// Criterion 6: 100 seeded symmetric-choose stress runs via the CLI.

void criterion_6() {
    int failures = 0;
    auto t0 = Clock::now();
    for (int seed = 1; seed <= 100; ++seed) {
        CmdResult r = run_cmd(std::string(EVSYNC_CLI_PATH) +
                              " stress --tasks 200 --channels 50 --timeout 30000"
                              " --seed " +
                              std::to_string(seed) + " 2>/dev/null");
        if (r.exit_code != 0) ++failures;
    }
    std::ostringstream note;
    note << failures << " timeouts over 100 seeded runs of 200 tasks "
         << "(both parties inside choose), " << seconds_since(t0) << " s total";
    report(6, failures == 0, note.str());
}

// ------------------------------------------------------------------- //
// Criterion 7: abort-action semantics, 100 deterministic repetitions.

void criterion_7() {
    int bad = 0;
    std::string first;
    for (int rep = 0; rep < 100 && bad == 0; ++rep) {
        // (a)+(b): the losing branch's action fires exactly once; the
        // committing branch's action never fires.
        {
            auto c = new_channel<int>();
            auto d = new_channel<int>();
            Cell<int> fired;
            spawn_detached([c] { send(c, 1); });
            auto r = async_result([c, d, fired] {
                return sync(choose<int>({
                    wrapabort<int>([fired]() mutable { fired.put(1); }, receive(c)),
                    wrapabort<int>([fired]() mutable { fired.put(2); }, receive(d)),
                }));
            });
            auto v = r.get_timeout(5000ms);
            auto first_fire = fired.get_timeout(5000ms);
            auto second_fire = fired.get_timeout(20ms);
            if (!v || *v != 1 || !first_fire || *first_fire != 2 || second_fire) {
                ++bad;
                first = "losing/winning branch at rep " + std::to_string(rep);
            }
        }
        // (c): an action wrapped outside a choose whose inner branch
        // commits is not spawned.
        {
            auto c = new_channel<int>();
            auto d = new_channel<int>();
            Cell<int> fired;
            spawn_detached([c] { send(c, 2); });
            auto r = async_result([c, d, fired] {
                return sync(wrapabort<int>([fired]() mutable { fired.put(0); },
                                           choose<int>({receive(c), receive(d)})));
            });
            auto v = r.get_timeout(5000ms);
            auto fire = fired.get_timeout(20ms);
            if (!v || *v != 2 || fire) {
                ++bad;
                first = "outer wrapabort at rep " + std::to_string(rep);
            }
        }
    }
    std::string note = "losing branch fires exactly once, committing and outer "
                       "never, 100/100 repetitions";
    if (bad) note += "; first failure: " + first;
    report(7, bad == 0, note);
}

// ------------------------------------------------------------------- //
// Criterion 8: guard thunk runs 1 + (forced retries) times, exactly.

void criterion_8() {
    int bad = 0;
    for (int run = 0; run < 100 && bad == 0; ++run) {
        auto c = new_channel<int>();
        auto count = std::make_shared<std::atomic<int>>(0);
        auto r = async_result([c, count] {
            return sync(guard<int>([c, count] {
                count->fetch_add(1);
                return receive(c);
            }));
        });
        int rejections = run % 5;
        for (int i = 0; i < rejections; ++i) {
            // Pose as a rival synchronizer: register an output candidate,
            // then cancel, which cancels the receiver's attempt too.
            CandidateCell cand;
            c.out.put(cand);
            DecisionCell d = cand.get();
            d.put(std::nullopt);
        }
        spawn_detached([c, run] { send(c, run); });
        auto v = r.get_timeout(5000ms);
        if (!v || *v != run || count->load() != 1 + rejections) ++bad;
    }
    report(8, bad == 0,
           "guard executions == 1 + forced retries, exact over 100 runs (0-4 "
           "retries each)");
}

// ------------------------------------------------------------------- //
// Criterion 9: guarded communication.

int child_grecv(int count, unsigned seed) {
    auto c = new_gchannel<int>();
    std::mt19937 rng(seed);
    std::multiset<int> evens;
    for (int i = 0; i < count; ++i) {
        int v = static_cast<int>(rng() % 10000);
        if (v % 2 == 0) evens.insert(v);
        spawn_detached([c, v]() mutable { sync(transmit(c, v)); });
    }
    auto even = [](const int& x) { return x % 2 == 0; };
    std::multiset<int> got;
    for (std::size_t i = 0; i < evens.size(); ++i) {
        auto v = async_result([c, even] { return sync(receive_if<int>(c, even)); })
                     .get_timeout(30000ms);
        if (!v) {
            std::cerr << "grecv: timed out after " << got.size() << " receives\n";
            return 1;
        }
        if (*v % 2 != 0) {
            std::cerr << "grecv: received odd value " << *v << "\n";
            return 1;
        }
        got.insert(*v);
    }
    return got == evens ? 0 : 1;
}

void criterion_9() {
    bool ok = true;
    std::string fail;
    for (unsigned seed = 1; seed <= 10 && ok; ++seed) {
        CmdResult r = run_cmd(std::string(EVSYNC_SELF_PATH) + " --child grecv 1000 " +
                              std::to_string(seed));
        if (r.exit_code != 0) {
            ok = false;
            fail = "predicate batch seed " + std::to_string(seed);
        }
    }
    auto t0 = Clock::now();
    if (ok) {
        CmdResult r = run_cmd(std::string(EVSYNC_SELF_PATH) + " --child gpairs 1000 100");
        if (r.exit_code != 0 || seconds_since(t0) >= 10.0) {
            ok = false;
            fail = "vacuous-predicate pair workload";
        }
    }
    std::string note = "no odd value through an even-only receive across 10x1000 "
                       "randomized messages; vacuous predicate matches plain "
                       "receive on the pair workload";
    if (!ok) note += "; failed: " + fail;
    report(9, ok, note);
}

// ------------------------------------------------------------------- //
// Criterion 10: cell transfer semantics over randomized schedules.

void criterion_10() {
    std::mt19937 rng(97);
    long violations = 0;
    const int schedules = 10000;
    for (int round = 0; round < schedules && violations == 0; ++round) {
        Cell<int> c;
        int nprod = 1 + static_cast<int>(rng() % 8);
        int ncons = 1 + static_cast<int>(rng() % (16 - nprod));
        int total = nprod * ncons; // <= 64, divisible both ways
        std::vector<std::thread> threads;
        std::mutex m;
        std::multiset<int> received;
        for (int p = 0; p < nprod; ++p)
            threads.emplace_back([c, p, ncons]() mutable {
                for (int k = 0; k < ncons; ++k) c.put(p * 1000 + k);
            });
        for (int q = 0; q < ncons; ++q)
            threads.emplace_back([&, c]() mutable {
                for (int k = 0; k < nprod; ++k) {
                    int v = c.get();
                    std::lock_guard<std::mutex> lock(m);
                    received.insert(v);
                }
            });
        for (auto& t : threads) t.join();
        std::multiset<int> sent;
        for (int p = 0; p < nprod; ++p)
            for (int k = 0; k < ncons; ++k) sent.insert(p * 1000 + k);
        if (received != sent) ++violations;
        (void)total;
    }
    report(10, violations == 0,
           "exactly-once, no-spurious-value over 10000 randomized schedules "
           "with up to 16 tasks");
}

} // namespace

int main(int argc, char** argv) {
    if (argc >= 2 && std::string(argv[1]) == "--child") {
        std::string mode = argc >= 3 ? argv[2] : "";
        if (mode == "pairs" && argc >= 5)
            return child_pairs(std::atoi(argv[3]), std::atoi(argv[4]), false);
        if (mode == "gpairs" && argc >= 5)
            return child_pairs(std::atoi(argv[3]), std::atoi(argv[4]), true);
        if (mode == "grecv" && argc >= 5)
            return child_grecv(std::atoi(argv[3]),
                               static_cast<unsigned>(std::atol(argv[4])));
        std::cerr << "unknown child mode\n";
        return 2;
    }

    criterion_1();
    criteria_2_3_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();

    std::cout << (g_failures == 0 ? "all criteria passed"
                                  : std::to_string(g_failures) + " criteria failed")
              << "\n";
    return g_failures == 0 ? 0 : 1;
}
