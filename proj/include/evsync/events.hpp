#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <type_traits>
#include <utility>
#include <vector>

#include "evsync/cell.hpp"

// First-class synchronous events over a distributed commit protocol.
//
// Three kinds of principals cooperate through single-slot cells: points
// (pending sends/receives), channels (matchmakers pairing one input and
// one output registration per session), and synchronizers (one per sync
// attempt, selecting the first of its points to be matched and rejecting
// the rest). A rendezvous commits only when both synchronizers approve.

namespace evsync {

using PointCell = Cell<Unit>;
using CommitCell = Cell<bool>;
using DecisionCell = Cell<std::optional<CommitCell>>;
using CandidateCell = Cell<DecisionCell>;
using InCell = Cell<CandidateCell>;
using OutCell = Cell<CandidateCell>;
using SyncCell = Cell<std::pair<PointCell, DecisionCell>>;

using PointList = std::vector<PointCell>;
using NameCell = Cell<PointList>;
using AbortFn = std::function<void()>;
using AbortCell = Cell<std::pair<PointList, AbortFn>>;

/// An event is a computation abstracted over the cells of the sync attempt
/// running it: the synchronizer's inbox, a name cell that will carry the
/// list of points the event encloses, and the attempt's abort inbox.
template <class T>
using Event = std::function<T(SyncCell, NameCell, AbortCell)>;

template <class T>
struct Channel {
    InCell in;
    OutCell out;
    Cell<T> payload;
};

/// One matchmaking session: pair an input and an output registration,
/// collect both synchronizers' decisions, and signal commits accordingly.
/// A side that was rejected by its synchronizer gets no signal at all.
inline void channel_session(InCell in, OutCell out) {
    CandidateCell candidate_i = in.get();
    CandidateCell candidate_o = out.get();
    DecisionCell decision_i;
    candidate_i.put(decision_i);
    std::optional<CommitCell> x_i = decision_i.get();
    DecisionCell decision_o;
    candidate_o.put(decision_o);
    std::optional<CommitCell> x_o = decision_o.get();
    if (x_i.has_value()) x_i->put(x_o.has_value());
    if (x_o.has_value()) x_o->put(x_i.has_value());
}

/// Dedicated server loop for one channel; spawned by new_channel.
inline void channel_actor(InCell in, OutCell out) {
    for (;;) channel_session(in, out);
}

template <class T>
Channel<T> new_channel() {
    Channel<T> c;
    spawn_detached([in = c.in, out = c.out] { channel_actor(in, out); });
    return c;
}

/// Registers an input point on a channel and blocks until its commit is
/// confirmed, then performs the payload action. A canceled or rejected
/// point is never signaled and act never runs.
template <class T>
T point_input(SyncCell s, PointCell p, InCell in, std::function<T()> act) {
    CandidateCell candidate;
    in.put(candidate);
    DecisionCell decision = candidate.get();
    s.put({p, decision});
    p.get();
    return act();
}

inline void point_output(SyncCell s, PointCell p, OutCell out,
                         std::function<void()> act) {
    CandidateCell candidate;
    out.put(candidate);
    DecisionCell decision = candidate.get();
    s.put({p, decision});
    p.get();
    act();
}

/// Serves one synchronizer attempt: selects the first point to report a
/// match, spawns a rejector loop that answers every later report with a
/// blank decision, and issues a commit cell to the selected point.
///
/// Returns false if the channel canceled the commit (the caller retries).
/// On commit this call never returns: it signals the commit point and then
/// serves the attempt's abort inbox forever, spawning each abort action
/// whose enclosed-point list does not contain the commit point.
inline bool sync_attempt(SyncCell s, AbortCell abort) {
    auto [p, decision] = s.get();
    spawn_detached([s]() mutable {
        for (;;) {
            auto [q, d] = s.get();
            d.put(std::nullopt);
        }
    });
    CommitCell commit;
    decision.put(std::optional<CommitCell>(commit));
    bool done = commit.get();
    if (!done) return false;
    p.put(Unit{});
    for (;;) {
        auto [points, f] = abort.get();
        bool encloses = std::any_of(points.begin(), points.end(),
                                    [&](const PointCell& q) { return q == p; });
        if (!encloses) spawn_detached(f);
    }
}

/// Spec surface: serve one attempt, invoking retry exactly once if it is
/// canceled. Committed attempts keep the calling thread as abort server.
inline void sync_actor(SyncCell s, AbortCell abort, std::function<void()> retry) {
    if (!sync_attempt(s, abort)) retry();
}

template <class T>
Event<T> receive(Channel<T> c) {
    return [c](SyncCell s, NameCell name, AbortCell) -> T {
        PointCell p;
        spawn_detached([name, p]() mutable { name.put(PointList{p}); });
        Cell<T> payload = c.payload;
        return point_input<T>(s, p, c.in,
                              [payload]() mutable { return payload.get(); });
    };
}

template <class T>
Event<Unit> transmit(Channel<T> c, T m) {
    return [c, m](SyncCell s, NameCell name, AbortCell) -> Unit {
        PointCell p;
        spawn_detached([name, p]() mutable { name.put(PointList{p}); });
        Cell<T> payload = c.payload;
        point_output(s, p, c.out,
                     [payload, m]() mutable { payload.put(std::move(m)); });
        return Unit{};
    };
}

/// The thunk runs once per synchronization attempt, before any point
/// registers; retries rerun it.
template <class T>
Event<T> guard(std::function<Event<T>()> f) {
    return [f](SyncCell s, NameCell name, AbortCell abort) -> T {
        return f()(s, name, abort);
    };
}

/// Post-synchronization transformer; runs only on the committed branch.
template <class T, class F>
auto wrap(Event<T> v, F f) -> Event<std::invoke_result_t<F, T>> {
    using U = std::invoke_result_t<F, T>;
    return [v, f](SyncCell s, NameCell name, AbortCell abort) -> U {
        return f(v(s, name, abort));
    };
}

/// Selective communication: runs every branch against the same
/// synchronizer; the first branch to commit supplies the result.
///
/// choose({}) yields an event that can never commit: synchronizing it
/// blocks forever. It is the unit of selective choice.
template <class T>
Event<T> choose(std::vector<Event<T>> vs) {
    return [vs](SyncCell s, NameCell name, AbortCell abort) -> T {
        Cell<T> result;
        PointList all_points;
        for (const Event<T>& v : vs) {
            NameCell branch_name;
            spawn_detached([v, s, branch_name, abort, result]() mutable {
                result.put(v(s, branch_name, abort));
            });
            PointList pts = branch_name.get();
            branch_name.put(pts); // peek
            all_points.insert(all_points.end(), pts.begin(), pts.end());
        }
        spawn_detached([name, all_points]() mutable { name.put(all_points); });
        return result.get();
    };
}

/// Registers f to run after a commit that falls outside v: f is spawned
/// iff the attempt commits at a point v does not enclose. If v (or a
/// branch within it) is the committed event, f never runs.
template <class T>
Event<T> wrapabort(AbortFn f, Event<T> v) {
    return [f, v](SyncCell s, NameCell name, AbortCell abort) -> T {
        spawn_detached([name, abort, f]() mutable {
            PointList pts = name.get();
            name.put(pts); // peek
            abort.put({pts, f});
        });
        return v(s, name, abort);
    };
}

/// Synchronizes an event: spawns one synchronizer attempt after another
/// (each with fresh cells) until one commits, and returns that attempt's
/// value. Blocks forever if no partner ever arrives.
template <class T>
T sync(Event<T> v) {
    Cell<T> result;
    spawn_detached([result, v]() mutable {
        for (;;) { // one iteration per attempt; a commit never returns
            SyncCell s;
            NameCell name;
            AbortCell abort;
            spawn_detached([v, s, name, abort, result]() mutable {
                result.put(v(s, name, abort));
            });
            if (sync_attempt(s, abort)) break;
        }
    });
    return result.get();
}

template <class T>
T accept(Channel<T> c) {
    return sync(receive(c));
}

template <class T>
void send(Channel<T> c, T m) {
    sync(transmit(c, std::move(m)));
}

} // namespace evsync
