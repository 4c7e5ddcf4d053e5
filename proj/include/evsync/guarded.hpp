#pragma once

#include <functional>
#include <optional>
#include <utility>

#include "evsync/cell.hpp"
#include "evsync/events.hpp"

// Guarded communication: receive events carry a predicate on the message,
// and the channel matches a pair only when the pending message satisfies
// it. A failed match bounces both registrations; the points transparently
// re-register. Incompatible pairs may bounce forever; there is no queueing
// or cross-matching between sessions.

namespace evsync {

using GCandidateCell = Cell<std::optional<DecisionCell>>;

template <class T>
using GPredicate = std::function<bool(const T&)>;

template <class T>
using GInCell = Cell<std::pair<GCandidateCell, GPredicate<T>>>;
template <class T>
using GOutCell = Cell<std::pair<GCandidateCell, T>>;

template <class T>
struct GChannel {
    GInCell<T> in;
    GOutCell<T> out;
    Cell<T> payload;
};

template <class T>
void g_channel_session(GInCell<T> in, GOutCell<T> out) {
    auto [candidate_i, cond] = in.get();
    auto [candidate_o, msg] = out.get();
    if (cond(msg)) {
        DecisionCell decision_i;
        candidate_i.put(std::optional<DecisionCell>(decision_i));
        std::optional<CommitCell> x_i = decision_i.get();
        DecisionCell decision_o;
        candidate_o.put(std::optional<DecisionCell>(decision_o));
        std::optional<CommitCell> x_o = decision_o.get();
        if (x_i.has_value()) x_i->put(x_o.has_value());
        if (x_o.has_value()) x_o->put(x_i.has_value());
    } else {
        candidate_i.put(std::nullopt);
        candidate_o.put(std::nullopt);
    }
}

template <class T>
void g_channel_actor(GInCell<T> in, GOutCell<T> out) {
    for (;;) g_channel_session(in, out);
}

template <class T>
GChannel<T> new_gchannel() {
    GChannel<T> c;
    spawn_detached([in = c.in, out = c.out] { g_channel_actor<T>(in, out); });
    return c;
}

/// As point_input, but a bounced registration (no match) re-registers
/// with a fresh candidate until the channel accepts the pair.
template <class T>
T g_point_input(SyncCell s, PointCell p, GInCell<T> in, GPredicate<T> cond,
                std::function<T()> act) {
    for (;;) {
        GCandidateCell candidate;
        in.put({candidate, cond});
        std::optional<DecisionCell> x = candidate.get();
        if (!x.has_value()) continue;
        s.put({p, *x});
        p.get();
        return act();
    }
}

template <class T>
void g_point_output(SyncCell s, PointCell p, GOutCell<T> out, T m,
                    std::function<void()> act) {
    for (;;) {
        GCandidateCell candidate;
        out.put({candidate, m});
        std::optional<DecisionCell> x = candidate.get();
        if (!x.has_value()) continue;
        s.put({p, *x});
        p.get();
        act();
        return;
    }
}

/// Receives a message satisfying cond. cond must be pure and total; a
/// diverging predicate stalls the channel actor.
template <class T>
Event<T> receive_if(GChannel<T> c, GPredicate<T> cond) {
    return [c, cond](SyncCell s, NameCell name, AbortCell) -> T {
        PointCell p;
        spawn_detached([name, p]() mutable { name.put(PointList{p}); });
        Cell<T> payload = c.payload;
        return g_point_input<T>(s, p, c.in, cond,
                                [payload]() mutable { return payload.get(); });
    };
}

template <class T>
Event<Unit> transmit(GChannel<T> c, T m) {
    return [c, m](SyncCell s, NameCell name, AbortCell) -> Unit {
        PointCell p;
        spawn_detached([name, p]() mutable { name.put(PointList{p}); });
        Cell<T> payload = c.payload;
        g_point_output<T>(s, p, c.out, m,
                          [payload, m]() mutable { payload.put(std::move(m)); });
        return Unit{};
    };
}

} // namespace evsync
