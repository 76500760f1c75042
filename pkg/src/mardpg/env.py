"""Synthetic two-scenario marketplace simulator.

Two ranking agents share one user session: agent 0 ("main search") ranks the
whole catalog, agent 1 ("store search") ranks the products of the store the
user navigated into. Exactly one agent is active per step. Actions are
ranking-feature weight vectors; products are scored by a dot product, the
user clicks among the top-k. The reward is the clicked product's expected
purchase value (conversion probability x price, amplified inside a store);
from the main search the user may instead navigate into the clicked product's
store with probability sigmoid(kappa * (store_popularity - 0.5)). A store
visit lasts a fixed number of steps before the user returns to the main
search; the deterministic visit length keeps the critic's one-step targets
low-variance.

The coupling is deliberate: emphasising the store-popularity feature routes
traffic into stores, where per-purchase value is amplified, at the cost of
immediate main-search conversions. A main-search agent maximising only its
own reward therefore learns to keep users OUT of stores, which is exactly
the conflict joint training is supposed to resolve. With kappa = 0 routing
is action-independent and the cooperation gap vanishes by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeError, StateError

MAIN_SEARCH = 0
STORE_SEARCH = 1
N_AGENTS = 2


class ConfigError(ValueError):
    """Invalid simulator or training configuration."""


@dataclass
class SimConfig:
    n_stores: int = 20
    n_products: int = 10          # per store
    user_dim: int = 8
    obs_dim: int = 16
    act_dim: int = 6              # number of ranking features
    horizon: int = 20
    kappa: float = 8.0            # navigation coupling strength
    price_lo: float = 0.1
    price_hi: float = 1.0
    top_k: int = 3
    store_visit_len: int = 3      # store steps before returning to main
    store_amplifier: float = 3.0  # in-store purchase value multiplier
    click_sharpness: float = 3.0
    seed: int = 0

    def validate(self) -> None:
        if self.horizon < 2:
            raise ConfigError("horizon must be >= 2")
        if self.act_dim < 2:
            raise ConfigError("act_dim must be >= 2")
        if self.kappa < 0.0:
            raise ConfigError("kappa must be >= 0")
        if not self.price_lo < self.price_hi:
            raise ConfigError("price range must satisfy lo < hi")
        if min(self.n_stores, self.n_products, self.top_k, self.user_dim,
               self.obs_dim) < 1:
            raise ConfigError("counts and dimensions must be positive")
        if self.price_lo < 0.0:
            raise ConfigError("prices must be nonnegative")
        if self.store_visit_len < 1:
            raise ConfigError("store_visit_len must be >= 1")
        if self.store_amplifier < 0.0:
            raise ConfigError("store_amplifier must be >= 0")


@dataclass
class Catalog:
    """Per-episode product catalog; one row per product."""
    store_id: np.ndarray       # (N,) int
    price: np.ndarray          # (N,)
    price_norm: np.ndarray     # (N,) in [0, 1]
    ctr_quality: np.ndarray    # (N,) in [0, 1]
    conv_quality: np.ndarray   # (N,) in [0, 1]
    sales_volume: np.ndarray   # (N,) in [0, 1]
    store_pop: np.ndarray      # (N,) popularity of the product's store
    latent: np.ndarray         # (N, user_dim) taste coordinates
    features: np.ndarray       # (N, act_dim) ranking features


@dataclass
class SimUser:
    preference: np.ndarray
    purchasing_power: float
    patience: int


@dataclass
class StepResult:
    reward: float
    obs: np.ndarray
    active_agent: int
    terminal: bool
    info: dict = field(default_factory=dict)


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + np.exp(-z))


def _build_features(cfg: SimConfig, price_norm, ctr, conv, sales, pop,
                    rng) -> np.ndarray:
    """Ranking-feature matrix. Index 0 is sales volume, the last index is
    store popularity (the traffic-routing feature); the middle indices cycle
    through ctr, conversion, price, promotion intensity and random filler.
    Promotion intensity anti-correlates with conversion quality (heavily
    promoted items convert worse), so an equal-weight ranker is actively
    hurt by it while a tuned ranker learns to suppress or invert it."""
    n = price_norm.size
    promo = 0.4 * rng.uniform(0.0, 1.0, size=n) + 0.6 * (1.0 - conv)
    cols = [sales]
    middle = [ctr, conv, price_norm, promo]
    for j in range(cfg.act_dim - 2):
        if j < len(middle):
            cols.append(middle[j])
        else:
            cols.append(rng.uniform(0.0, 1.0, size=n))
    cols.append(pop)
    return np.column_stack(cols)


class MarketplaceEnv:
    """Seeded, fully deterministic session simulator."""

    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        self._rng: np.random.Generator | None = None
        self._done = True
        self.user: SimUser | None = None
        # the catalog is fixed per configuration seed; only the user and the
        # session stochasticity vary across episodes. A per-episode catalog
        # would put most of the reward variance outside the observation and
        # bury the learning signal under critic noise.
        cfg = config
        crng = np.random.default_rng(cfg.seed)
        n = cfg.n_stores * cfg.n_products
        store_id = np.repeat(np.arange(cfg.n_stores), cfg.n_products)
        pops = crng.uniform(0.0, 1.0, size=cfg.n_stores)
        price = crng.uniform(cfg.price_lo, cfg.price_hi, size=n)
        price_norm = (price - cfg.price_lo) / (cfg.price_hi - cfg.price_lo)
        ctr = crng.uniform(0.0, 1.0, size=n)
        conv = crng.uniform(0.0, 1.0, size=n)
        sales = crng.uniform(0.0, 1.0, size=n)
        latent = crng.uniform(-1.0, 1.0, size=(n, cfg.user_dim))
        pop = pops[store_id]
        features = _build_features(cfg, price_norm, ctr, conv, sales, pop,
                                   crng)
        self.catalog = Catalog(store_id=store_id, price=price,
                               price_norm=price_norm, ctr_quality=ctr,
                               conv_quality=conv, sales_volume=sales,
                               store_pop=pop, latent=latent, features=features)

    # ------------------------------------------------------------------
    def reset(self, seed: int | None = None):
        cfg = self.config
        if seed is None:
            seed = cfg.seed
        rng = np.random.default_rng(seed)
        self._rng = rng

        pref = rng.uniform(-1.0, 1.0, size=cfg.user_dim)
        power = float(rng.uniform(0.3, 1.0))
        patience = int(rng.integers(max(2, cfg.horizon // 2), cfg.horizon + 1))
        self.user = SimUser(preference=pref, purchasing_power=power,
                            patience=patience)
        self._affinity = (self.catalog.latent @ pref) / cfg.user_dim

        self._episode_len = min(cfg.horizon, patience)
        self._t = 0
        self._agent = MAIN_SEARCH
        self._store: int | None = None
        self._visit = 0
        self._done = False
        obs = self._observe()
        self._obs = obs
        return obs, self._agent

    # ------------------------------------------------------------------
    @property
    def active_agent(self) -> int:
        return self._agent

    @property
    def current_obs(self) -> np.ndarray:
        return self._obs

    @property
    def done(self) -> bool:
        return self._done

    @property
    def t(self) -> int:
        return self._t

    # ------------------------------------------------------------------
    def _observe(self) -> np.ndarray:
        """Observation for the currently active agent: user features plus
        summary statistics of the locally visible catalog only."""
        cfg = self.config
        cat = self.catalog
        if self._agent == MAIN_SEARCH:
            stats = [float(np.mean(cat.ctr_quality)),
                     float(np.mean(cat.price_norm)),
                     float(np.mean(cat.store_pop)),
                     float(np.mean(cat.sales_volume))]
        else:
            mask = cat.store_id == self._store
            stats = [float(np.mean(cat.conv_quality[mask])),
                     float(np.mean(cat.price_norm[mask])),
                     float(cat.store_pop[mask][0]),
                     float(np.mean(cat.sales_volume[mask]))]
        left = (self._episode_len - self._t) / cfg.horizon
        base = np.concatenate([
            self.user.preference,
            [self.user.purchasing_power,
             self._t / cfg.horizon,
             float(self._agent)],
            stats,
            [left],
        ])
        obs = np.zeros(cfg.obs_dim)
        m = min(base.size, cfg.obs_dim)
        obs[:m] = base[:m]
        return obs

    # ------------------------------------------------------------------
    def step(self, action) -> StepResult:
        if self._done:
            raise StateError("env.step called after the episode terminated")
        cfg = self.config
        cat = self.catalog
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (cfg.act_dim,):
            raise ShapeError(
                f"action: expected shape ({cfg.act_dim},), got {action.shape}")

        agent = self._agent
        if agent == MAIN_SEARCH:
            cand = np.arange(cat.store_id.size)
        else:
            cand = np.flatnonzero(cat.store_id == self._store)

        scores = cat.features[cand] @ action
        k = min(cfg.top_k, cand.size)
        order = np.argsort(-scores, kind="stable")[:k]
        top = cand[order]

        logits = cfg.click_sharpness * (cat.ctr_quality[top]
                                        + self._affinity[top]
                                        + 0.5 * cat.sales_volume[top])
        logits = logits - logits.max()
        probs = np.exp(logits)
        probs /= probs.sum()
        clicked = int(top[self._rng.choice(k, p=probs)])

        # Reward is the EXPECTED purchase value (conversion probability x
        # price): purchases never influence the session dynamics, so using
        # the expectation changes no transition law while removing a large
        # aleatoric noise floor from the critic's regression targets.
        reward = 0.0
        navigated = False
        p_buy = cat.conv_quality[clicked] * self.user.purchasing_power
        if agent == MAIN_SEARCH:
            # kappa scales both the popularity sensitivity and the overall
            # propensity to navigate: kappa = 0 disables navigation entirely,
            # fully decoupling the two scenarios (not just making navigation
            # action-independent, which would still let the main action pick
            # the landing store).
            p_nav = ((1.0 - np.exp(-cfg.kappa))
                     * _sigmoid(cfg.kappa * (cat.store_pop[clicked] - 0.5)))
            if self._rng.random() < p_nav:
                navigated = True
                self._store = int(cat.store_id[clicked])
                self._agent = STORE_SEARCH
                self._visit = 0
            else:
                reward = float(p_buy * cat.price[clicked])
        else:
            reward = float(p_buy * cat.price[clicked]) * cfg.store_amplifier
            self._visit += 1
            if self._visit >= cfg.store_visit_len:
                self._agent = MAIN_SEARCH
                self._store = None

        self._t += 1
        terminal = self._t >= self._episode_len
        self._done = terminal
        obs = self._observe()
        self._obs = obs
        info = {
            "agent": agent,
            "clicked": clicked,
            "navigated": navigated,
            "reward_main": reward if agent == MAIN_SEARCH else 0.0,
            "reward_store": reward if agent == STORE_SEARCH else 0.0,
        }
        return StepResult(reward=reward, obs=obs, active_agent=self._agent,
                          terminal=terminal, info=info)


# ---------------------------------------------------------------------------
# cooperation-gap certification

@dataclass
class GapResult:
    coop_value: float
    independent_value: float
    coop_se: float
    independent_se: float
    coop_actions: tuple
    independent_actions: tuple
    n_eval: int

    @property
    def gap(self) -> float:
        return self.coop_value - self.independent_value

    @property
    def gap_se(self) -> float:
        return float(np.sqrt(self.coop_se ** 2 + self.independent_se ** 2))

    @property
    def certified(self) -> bool:
        return self.gap > 3.0 * self.gap_se


def _binary_candidates(act_dim: int) -> np.ndarray:
    """All nonzero {0,1} weight vectors (coarse action grid)."""
    combos = []
    for bits in range(1, 2 ** act_dim):
        combos.append([(bits >> j) & 1 for j in range(act_dim)])
    return np.array(combos, dtype=np.float64)


def _signed_candidates(act_dim: int) -> np.ndarray:
    """All nonzero {-1, 0, 1} weight vectors; the main-search grid must be
    able to suppress a feature (e.g. rank popular stores DOWN), not just
    ignore it."""
    combos = []
    for code in range(3 ** act_dim):
        vec = []
        c = code
        for _ in range(act_dim):
            vec.append(c % 3 - 1)
            c //= 3
        if any(vec):
            combos.append(vec)
    return np.array(combos, dtype=np.float64)


def rollout_constant(config: SimConfig, a_main, a_store, n_episodes: int,
                     seed: int) -> np.ndarray:
    """Monte-Carlo returns of a constant-action policy pair.

    Returns an (n_episodes, 3) array of (total, main, store) rewards; episode
    j uses env seed seed + j so candidate comparisons are paired.
    """
    env = MarketplaceEnv(config)
    out = np.zeros((n_episodes, 3))
    actions = (np.asarray(a_main, dtype=np.float64),
               np.asarray(a_store, dtype=np.float64))
    for j in range(n_episodes):
        env.reset(seed + j)
        while not env.done:
            agent = env.active_agent
            res = env.step(actions[agent])
            out[j, 0] += res.reward
            out[j, 1] += res.info["reward_main"]
            out[j, 2] += res.info["reward_store"]
    return out


def scripted_optimal_gap(config: SimConfig, n_eval: int = 10_000,
                         n_screen: int = 300,
                         seed: int | None = None) -> GapResult:
    """Grid-search certificate that joint optimization beats independent
    optimization in this environment.

    Screens constant-action candidates on a coarse binary grid, picks (a) the
    pair where each scenario greedily maximises its own reward and (b) the
    pair maximising total reward, then evaluates both with fresh Monte-Carlo
    episodes. Refuses configs too large to brute-force honestly.
    """
    config.validate()
    if config.n_products > 10 or config.horizon > 10 or config.act_dim > 8:
        raise ConfigError(
            "scripted_optimal_gap: config too large for grid certification "
            "(need n_products <= 10, horizon <= 10, act_dim <= 8)")
    if seed is None:
        seed = config.seed
    store_cands = _binary_candidates(config.act_dim)
    main_cands = _signed_candidates(config.act_dim)
    a_ref = np.ones(config.act_dim)

    # best store-scenario action, screened under a neutral main policy;
    # store reward factorises from the main action up to routing volume
    store_vals = [rollout_constant(config, a_ref, c, n_screen, seed)[:, 2].mean()
                  for c in store_cands]
    a_store = store_cands[int(np.argmax(store_vals))]

    # main candidates: own-scenario reward picks the independent pair,
    # total reward picks the cooperative pair
    main_vals = []
    total_vals = []
    for c in main_cands:
        r = rollout_constant(config, c, a_store, n_screen, seed + 1_000_000)
        main_vals.append(r[:, 1].mean())
        total_vals.append(r[:, 0].mean())
    a_main_indep = main_cands[int(np.argmax(main_vals))]
    a_main_coop = main_cands[int(np.argmax(total_vals))]

    eval_seed = seed + 2_000_000
    coop = rollout_constant(config, a_main_coop, a_store, n_eval, eval_seed)
    indep = rollout_constant(config, a_main_indep, a_store, n_eval, eval_seed)
    return GapResult(
        coop_value=float(coop[:, 0].mean()),
        independent_value=float(indep[:, 0].mean()),
        coop_se=float(coop[:, 0].std(ddof=1) / np.sqrt(n_eval)),
        independent_se=float(indep[:, 0].std(ddof=1) / np.sqrt(n_eval)),
        coop_actions=(tuple(a_main_coop), tuple(a_store)),
        independent_actions=(tuple(a_main_indep), tuple(a_store)),
        n_eval=n_eval,
    )
