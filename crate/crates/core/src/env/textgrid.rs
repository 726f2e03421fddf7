//! Cooking-quest text grid: a few rooms joined by doors, a cookbook, a knife,
//! some ingredients, and an ordered chain of scored subgoals.

use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::StrategicOracle;
use super::EnvError;
use crate::trajectory::{ActionText, Observation, DEFAULT_HORIZON_CAP};

/// Marker that only the debugging channel may print. Observations never contain it.
pub const ADMISSIBLE_DEBUG_MARKER: &str = "[admissible-actions]";
pub const UNPARSABLE_MESSAGE: &str = "I don't understand that command.";
const TASK_PREAMBLE: &str =
    "You are hungry! Find the cookbook, follow its recipe, and eat the meal you prepare.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
}

impl Difficulty {
    pub fn num_rooms(self) -> usize {
        match self {
            Difficulty::Easy => 2,
            Difficulty::Medium => 4,
        }
    }

    pub fn num_recipe_ingredients(self) -> usize {
        match self {
            Difficulty::Easy => 1,
            Difficulty::Medium => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "easy" => Some(Difficulty::Easy),
            "medium" => Some(Difficulty::Medium),
            _ => None,
        }
    }
}

/// Task ids encode how to regenerate the task: `<difficulty>-<seed>`.
pub fn task_id(difficulty: Difficulty, seed: u64) -> String {
    format!("{}-{seed}", difficulty.as_str())
}

pub fn parse_task_id(id: &str) -> Option<(Difficulty, u64)> {
    let (d, s) = id.split_once('-')?;
    Some((Difficulty::parse(d)?, s.parse().ok()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];

    pub fn opposite(self) -> Self {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::East => Direction::West,
            Direction::West => Direction::East,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn offset(self) -> (i32, i32) {
        match self {
            Direction::North => (0, 1),
            Direction::South => (0, -1),
            Direction::East => (1, 0),
            Direction::West => (-1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::South => "south",
            Direction::East => "east",
            Direction::West => "west",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Direction::ALL.into_iter().find(|d| d.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Item {
    Cookbook,
    Knife,
    Tomato,
    Potato,
    Carrot,
}

impl Item {
    pub const ALL: [Item; 5] = [
        Item::Cookbook,
        Item::Knife,
        Item::Tomato,
        Item::Potato,
        Item::Carrot,
    ];
    pub const INGREDIENTS: [Item; 3] = [Item::Tomato, Item::Potato, Item::Carrot];

    pub fn name(self) -> &'static str {
        match self {
            Item::Cookbook => "cookbook",
            Item::Knife => "knife",
            Item::Tomato => "tomato",
            Item::Potato => "potato",
            Item::Carrot => "carrot",
        }
    }

    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn is_ingredient(self) -> bool {
        Item::INGREDIENTS.contains(&self)
    }

    fn parse(s: &str) -> Option<Self> {
        Item::ALL.into_iter().find(|i| i.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub name: String,
    /// Grid position; only used to keep the layout planar.
    pub pos: (i32, i32),
}

/// Door between `from` and `to`; `direction` leads from `from` to `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Door {
    pub from: usize,
    pub to: usize,
    pub direction: Direction,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemPlacement {
    pub item: Item,
    pub room: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubgoalVerb {
    Chop,
    Cook,
    Eat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgoal {
    pub verb: SubgoalVerb,
    pub target: Option<Item>,
}

impl Subgoal {
    pub fn command(&self) -> String {
        match (self.verb, self.target) {
            (SubgoalVerb::Chop, Some(i)) => format!("chop {} with knife", i.name()),
            (SubgoalVerb::Cook, Some(i)) => format!("cook {} with stove", i.name()),
            _ => "eat meal".to_owned(),
        }
    }
}

/// Generated task. Room 0 is always the kitchen, which holds the stove.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub rooms: Vec<Room>,
    pub doors: Vec<Door>,
    pub items: Vec<ItemPlacement>,
    pub subgoal_chain: Vec<Subgoal>,
    pub distractors: Vec<String>,
    pub max_score: u32,
}

const KITCHEN: usize = 0;
const OTHER_ROOM_NAMES: [&str; 8] = [
    "pantry",
    "living room",
    "bedroom",
    "garden",
    "bathroom",
    "corridor",
    "backyard",
    "cellar",
];

pub const DISTRACTOR_COMMANDS: [&str; 2] = ["look", "inventory"];

/// The fixed command vocabulary shared by the policy and the oracle. The two
/// trailing entries are incomplete commands the parser rejects.
pub fn vocabulary() -> &'static [ActionText] {
    use std::sync::OnceLock;
    static VOCAB: OnceLock<Vec<ActionText>> = OnceLock::new();
    VOCAB.get_or_init(|| {
        let mut v: Vec<String> = DISTRACTOR_COMMANDS.iter().map(|s| s.to_string()).collect();
        for d in Direction::ALL {
            v.push(format!("go {}", d.name()));
        }
        for d in Direction::ALL {
            v.push(format!("open {} door", d.name()));
        }
        v.push("examine cookbook".into());
        v.push("take knife".into());
        for i in Item::INGREDIENTS {
            v.push(format!("take {}", i.name()));
        }
        for i in Item::INGREDIENTS {
            v.push(format!("chop {} with knife", i.name()));
        }
        for i in Item::INGREDIENTS {
            v.push(format!("cook {} with stove", i.name()));
        }
        v.push("eat meal".into());
        v.push("take".into());
        v.push("go".into());
        v.into_iter()
            .map(|s| ActionText::new(s).expect("vocabulary entry is valid"))
            .collect()
    })
}

pub fn vocabulary_index(action: &ActionText) -> Option<usize> {
    vocabulary().iter().position(|a| a == action)
}

/// Index of `inventory` in the vocabulary.
pub const INVENTORY_ACTION: usize = 1;

impl TaskSpec {
    /// Deterministic generator. Every returned task is solvable within the
    /// default horizon cap.
    pub fn generate(seed: u64, difficulty: Difficulty) -> TaskSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(match difficulty {
            Difficulty::Easy => 1,
            Difficulty::Medium => 2,
        });
        loop {
            let spec = Self::sample(&mut rng, difficulty);
            let oracle = StrategicOracle::new(&spec);
            let (state, _) = spec.reset();
            match oracle.distance(&state) {
                Some(d) if d <= DEFAULT_HORIZON_CAP => return spec,
                _ => continue,
            }
        }
    }

    fn sample(rng: &mut ChaCha8Rng, difficulty: Difficulty) -> TaskSpec {
        let n = difficulty.num_rooms();
        let mut names: Vec<&str> = OTHER_ROOM_NAMES.to_vec();
        names.shuffle(rng);
        let mut rooms = vec![Room {
            name: "kitchen".into(),
            pos: (0, 0),
        }];
        let mut doors = Vec::new();
        while rooms.len() < n {
            let anchor = rng.random_range(0..rooms.len());
            let dir = *Direction::ALL.choose(rng).expect("non-empty");
            let (dx, dy) = dir.offset();
            let (ax, ay) = rooms[anchor].pos;
            let pos = (ax + dx, ay + dy);
            if rooms.iter().any(|r| r.pos == pos) {
                continue;
            }
            doors.push(Door {
                from: anchor,
                to: rooms.len(),
                direction: dir,
                closed: rng.random_bool(0.5),
            });
            rooms.push(Room {
                name: names[rooms.len() - 1].to_owned(),
                pos,
            });
        }

        let mut ingredients = Item::INGREDIENTS.to_vec();
        ingredients.shuffle(rng);
        let k = difficulty.num_recipe_ingredients();
        let recipe: Vec<Item> = ingredients[..k].to_vec();
        // one ingredient the recipe does not use
        let placed: Vec<Item> = ingredients[..k + 1].to_vec();

        let mut items = vec![
            ItemPlacement {
                item: Item::Cookbook,
                room: rng.random_range(0..n),
            },
            ItemPlacement {
                item: Item::Knife,
                room: rng.random_range(0..n),
            },
        ];
        for item in placed {
            items.push(ItemPlacement {
                item,
                room: rng.random_range(0..n),
            });
        }

        let mut subgoal_chain = Vec::new();
        for &ing in &recipe {
            subgoal_chain.push(Subgoal {
                verb: SubgoalVerb::Chop,
                target: Some(ing),
            });
            subgoal_chain.push(Subgoal {
                verb: SubgoalVerb::Cook,
                target: Some(ing),
            });
        }
        subgoal_chain.push(Subgoal {
            verb: SubgoalVerb::Eat,
            target: None,
        });
        let max_score = subgoal_chain.len() as u32;
        let mut distractors: Vec<String> = DISTRACTOR_COMMANDS.iter().map(|s| s.to_string()).collect();
        distractors.extend(Direction::ALL.iter().map(|d| format!("go {}", d.name())));
        distractors.extend(Direction::ALL.iter().map(|d| format!("open {} door", d.name())));
        distractors.push("examine cookbook".into());
        distractors.extend(["knife", "tomato", "potato", "carrot"].iter().map(|i| format!("take {i}")));

        TaskSpec {
            rooms,
            doors,
            items,
            subgoal_chain,
            distractors,
            max_score,
        }
    }

    pub fn recipe(&self) -> Vec<Item> {
        self.subgoal_chain
            .iter()
            .filter(|g| g.verb == SubgoalVerb::Chop)
            .filter_map(|g| g.target)
            .collect()
    }

    pub fn item_room(&self, item: Item) -> Option<usize> {
        self.items.iter().find(|p| p.item == item).map(|p| p.room)
    }

    /// Door index and neighbour reached by leaving `room` towards `dir`.
    pub fn exit(&self, room: usize, dir: Direction) -> Option<(usize, usize)> {
        self.doors.iter().enumerate().find_map(|(k, d)| {
            if d.from == room && d.direction == dir {
                Some((k, d.to))
            } else if d.to == room && d.direction.opposite() == dir {
                Some((k, d.from))
            } else {
                None
            }
        })
    }

    fn full_mask(&self) -> u8 {
        ((1u16 << self.subgoal_chain.len()) - 1) as u8
    }

    pub fn reset(&self) -> (EnvState, Observation) {
        let door_open = self
            .doors
            .iter()
            .enumerate()
            .filter(|(_, d)| !d.closed)
            .fold(0u8, |m, (k, _)| m | (1 << k));
        let state = EnvState {
            current_room: KITCHEN,
            inventory_items: 0,
            subgoals_done: 0,
            door_open,
            recipe_known: false,
            steps_taken: 0,
        };
        let text = format!("{TASK_PREAMBLE}\n{}", self.describe_room(&state));
        (
            state,
            Observation {
                text,
                step_index: 0,
            },
        )
    }

    fn items_here(&self, state: &EnvState) -> Vec<Item> {
        self.items
            .iter()
            .filter(|p| p.room == state.current_room && state.inventory_items & p.item.bit() == 0)
            .map(|p| p.item)
            .collect()
    }

    fn describe_room(&self, state: &EnvState) -> String {
        let room = state.current_room;
        let mut things: Vec<String> = Vec::new();
        if room == KITCHEN {
            things.push("a stove".into());
        }
        for item in self.items_here(state) {
            things.push(format!("a {}", item.name()));
        }
        let seen = if things.is_empty() {
            "nothing of interest".to_owned()
        } else {
            things.join(", ")
        };
        let exits: Vec<String> = Direction::ALL
            .iter()
            .filter_map(|&d| {
                self.exit(room, d).map(|(k, _)| {
                    let status = if state.door_open & (1 << k) != 0 { "open" } else { "closed" };
                    format!("{} ({status} door)", d.name())
                })
            })
            .collect();
        format!(
            "-= {} =-\nYou see: {seen}.\nExits: {}.",
            capitalize(&self.rooms[room].name),
            exits.join(", ")
        )
    }

    fn recipe_text(&self) -> String {
        let steps: Vec<String> = self.subgoal_chain.iter().map(Subgoal::command).collect();
        format!("The recipe reads: {}.", steps.join(", then "))
    }

    /// Deterministic transition. Rejects stepping a finished episode.
    pub fn step(&self, state: &EnvState, action: &ActionText) -> Result<(EnvState, EnvFeedback), EnvError> {
        if state.is_done(self) {
            return Err(EnvError::EpisodeDone);
        }
        let mut next = *state;
        next.steps_taken += 1;
        let (kind, text, score_delta) = match Command::parse(action.as_str()) {
            None => (FeedbackKind::Unparsable, UNPARSABLE_MESSAGE.to_owned(), 0),
            Some(cmd) => self.apply(&mut next, cmd),
        };
        let done = next.is_done(self);
        Ok((
            next,
            EnvFeedback {
                text,
                score_delta,
                done,
                parse_ok: kind != FeedbackKind::Unparsable,
                kind,
            },
        ))
    }

    fn apply(&self, s: &mut EnvState, cmd: Command) -> (FeedbackKind, String, u32) {
        use FeedbackKind::*;
        match cmd {
            Command::Look => (Info, self.describe_room(s), 0),
            Command::Inventory => {
                let held: Vec<&str> = Item::ALL
                    .iter()
                    .filter(|i| s.inventory_items & i.bit() != 0)
                    .map(|i| i.name())
                    .collect();
                let text = if held.is_empty() {
                    "You are carrying nothing.".to_owned()
                } else {
                    format!("You are carrying: {}.", held.join(", "))
                };
                (Info, text, 0)
            }
            Command::Go(d) => match self.exit(s.current_room, d) {
                None => (Failed, "You can't go that way.".into(), 0),
                Some((k, _)) if s.door_open & (1 << k) == 0 => {
                    (Failed, format!("The {} door is closed.", d.name()), 0)
                }
                Some((_, to)) => {
                    s.current_room = to;
                    (Moved, self.describe_room(s), 0)
                }
            },
            Command::Open(d) => match self.exit(s.current_room, d) {
                None => (Failed, "You see no door there.".into(), 0),
                Some((k, _)) if s.door_open & (1 << k) != 0 => {
                    (Failed, "That is already open.".into(), 0)
                }
                Some((k, _)) => {
                    s.door_open |= 1 << k;
                    (Opened, format!("You open the {} door.", d.name()), 0)
                }
            },
            Command::Examine(item) => {
                let visible = self.items_here(s).contains(&item) || s.inventory_items & item.bit() != 0;
                if !visible {
                    (Failed, "You can't see any such thing.".into(), 0)
                } else if item == Item::Cookbook {
                    s.recipe_known = true;
                    (Examined, self.recipe_text(), 0)
                } else {
                    (Info, format!("It's an ordinary {}.", item.name()), 0)
                }
            }
            Command::Take(item) => {
                if s.inventory_items & item.bit() != 0 {
                    (Failed, "You already have that.".into(), 0)
                } else if !self.items_here(s).contains(&item) {
                    (Failed, "You can't see any such thing.".into(), 0)
                } else if item == Item::Cookbook {
                    (Failed, "The cookbook is fixed to its stand.".into(), 0)
                } else {
                    s.inventory_items |= item.bit();
                    (Took, format!("You take the {}.", item.name()), 0)
                }
            }
            Command::Chop(item) | Command::Cook(item) | Command::Eat(item) => {
                let verb = cmd.verb();
                let target = if verb == SubgoalVerb::Eat { None } else { Some(item) };
                if !s.recipe_known {
                    return (Failed, "You don't know what to cook yet.".into(), 0);
                }
                if let Some(ing) = target {
                    if s.inventory_items & ing.bit() == 0 {
                        return (Failed, format!("You don't have a {}.", ing.name()), 0);
                    }
                }
                if verb == SubgoalVerb::Chop && s.inventory_items & Item::Knife.bit() == 0 {
                    return (Failed, "You need a knife for that.".into(), 0);
                }
                if verb == SubgoalVerb::Cook && s.current_room != KITCHEN {
                    return (Failed, "There is no stove here.".into(), 0);
                }
                let next = s.subgoals_done.count_ones() as usize;
                let goal = Subgoal { verb, target };
                if self.subgoal_chain.get(next) == Some(&goal) {
                    s.subgoals_done |= 1 << next;
                    let text = match verb {
                        SubgoalVerb::Chop => format!("You chop the {}. Your score went up by one.", item.name()),
                        SubgoalVerb::Cook => format!("You cook the {}. Your score went up by one.", item.name()),
                        SubgoalVerb::Eat => "You eat the meal. Delicious! Your score went up by one.".into(),
                    };
                    (Scored, text, 1)
                } else {
                    (Failed, "You can't do that right now.".into(), 0)
                }
            }
        }
    }

    /// What the agent can see in `state`; the same content the observation text renders.
    pub fn percept(&self, state: &EnvState) -> Percept {
        let mut visible = 0u8;
        for item in self.items_here(state) {
            visible |= item.bit();
        }
        let mut exits = [false; 4];
        let mut closed = [false; 4];
        for d in Direction::ALL {
            if let Some((k, _)) = self.exit(state.current_room, d) {
                exits[d.index()] = true;
                closed[d.index()] = state.door_open & (1 << k) == 0;
            }
        }
        let recipe_mask = if state.recipe_known {
            self.recipe().iter().fold(0u8, |m, i| m | i.bit())
        } else {
            0
        };
        // the recipe lists its steps in order, so a reader knows what comes next
        let next_subgoal = if state.recipe_known {
            self.subgoal_chain.get(state.subgoals_done.count_ones() as usize).copied()
        } else {
            None
        };
        Percept {
            in_kitchen: state.current_room == KITCHEN,
            visible_items: visible,
            held_items: state.inventory_items,
            recipe_known: state.recipe_known,
            recipe_mask,
            subgoals_done: state.subgoals_done.count_ones() as usize,
            next_subgoal,
            exits,
            closed_doors: closed,
        }
    }

    /// Debug-only listing of commands that change the state. Never part of an observation.
    pub fn debug_admissible(&self, state: &EnvState) -> String {
        let names: Vec<&str> = vocabulary()
            .iter()
            .filter(|a| {
                self.step(state, a)
                    .map(|(n, _)| n.key() != state.key())
                    .unwrap_or(false)
            })
            .map(ActionText::as_str)
            .collect();
        format!("{ADMISSIBLE_DEBUG_MARKER} {}", names.join(" | "))
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    Look,
    Inventory,
    Go(Direction),
    Open(Direction),
    Examine(Item),
    Take(Item),
    Chop(Item),
    Cook(Item),
    Eat(Item),
}

impl Command {
    fn parse(s: &str) -> Option<Command> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["look"] => Some(Command::Look),
            ["inventory"] => Some(Command::Inventory),
            ["go", d] => Direction::parse(d).map(Command::Go),
            ["open", d, "door"] => Direction::parse(d).map(Command::Open),
            ["examine", i] => Item::parse(i).map(Command::Examine),
            ["take", i] => Item::parse(i).map(Command::Take),
            ["chop", i, "with", "knife"] => Item::parse(i).filter(|i| i.is_ingredient()).map(Command::Chop),
            ["cook", i, "with", "stove"] => Item::parse(i).filter(|i| i.is_ingredient()).map(Command::Cook),
            ["eat", "meal"] => Some(Command::Eat(Item::Cookbook)),
            _ => None,
        }
    }

    fn verb(self) -> SubgoalVerb {
        match self {
            Command::Chop(_) => SubgoalVerb::Chop,
            Command::Cook(_) => SubgoalVerb::Cook,
            _ => SubgoalVerb::Eat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub current_room: usize,
    pub inventory_items: u8,
    /// Chain-prefix bitmask of completed subgoals.
    pub subgoals_done: u8,
    /// Bit k set when door k is open.
    pub door_open: u8,
    pub recipe_known: bool,
    pub steps_taken: u32,
}

/// Packed state without the step counter; what the oracle searches over.
pub type StateKey = u32;

impl EnvState {
    pub fn is_done(&self, spec: &TaskSpec) -> bool {
        self.subgoals_done == spec.full_mask()
    }

    pub fn key(&self) -> StateKey {
        (self.current_room as u32)
            | (u32::from(self.inventory_items) << 4)
            | (u32::from(self.subgoals_done) << 12)
            | (u32::from(self.door_open) << 20)
            | (u32::from(self.recipe_known) << 28)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeedbackKind {
    Start,
    Info,
    Moved,
    Opened,
    Examined,
    Took,
    Scored,
    Failed,
    Unparsable,
}

impl FeedbackKind {
    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FeedbackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvFeedback {
    pub text: String,
    pub score_delta: u32,
    pub done: bool,
    pub parse_ok: bool,
    pub kind: FeedbackKind,
}

/// Structured snapshot of what the current observation shows the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Percept {
    pub in_kitchen: bool,
    pub visible_items: u8,
    pub held_items: u8,
    pub recipe_known: bool,
    pub recipe_mask: u8,
    pub subgoals_done: usize,
    /// Next step of the recipe, once it has been read.
    pub next_subgoal: Option<Subgoal>,
    pub exits: [bool; 4],
    pub closed_doors: [bool; 4],
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(s: &str) -> ActionText {
        ActionText::new(s).unwrap()
    }

    fn run(spec: &TaskSpec, cmds: &[&str]) -> (EnvState, Vec<EnvFeedback>) {
        let (mut s, _) = spec.reset();
        let mut out = Vec::new();
        for c in cmds {
            let (n, fb) = spec.step(&s, &act(c)).unwrap();
            s = n;
            out.push(fb);
        }
        (s, out)
    }

    /// Two rooms, everything in the kitchen except the knife, door open.
    fn fixed_spec() -> TaskSpec {
        TaskSpec {
            rooms: vec![
                Room { name: "kitchen".into(), pos: (0, 0) },
                Room { name: "pantry".into(), pos: (0, 1) },
            ],
            doors: vec![Door { from: 0, to: 1, direction: Direction::North, closed: false }],
            items: vec![
                ItemPlacement { item: Item::Cookbook, room: 0 },
                ItemPlacement { item: Item::Knife, room: 1 },
                ItemPlacement { item: Item::Tomato, room: 0 },
                ItemPlacement { item: Item::Carrot, room: 1 },
            ],
            subgoal_chain: vec![
                Subgoal { verb: SubgoalVerb::Chop, target: Some(Item::Tomato) },
                Subgoal { verb: SubgoalVerb::Cook, target: Some(Item::Tomato) },
                Subgoal { verb: SubgoalVerb::Eat, target: None },
            ],
            distractors: vec!["look".into(), "inventory".into()],
            max_score: 3,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(TaskSpec::generate(7, Difficulty::Easy), TaskSpec::generate(7, Difficulty::Easy));
        assert_eq!(TaskSpec::generate(7, Difficulty::Medium), TaskSpec::generate(7, Difficulty::Medium));
    }

    #[test]
    fn consecutive_seeds_differ() {
        let differing = (7..17)
            .filter(|&s| TaskSpec::generate(s, Difficulty::Easy) != TaskSpec::generate(s + 1, Difficulty::Easy))
            .count();
        assert!(differing >= 9, "{differing}");
    }

    #[test]
    fn difficulty_shapes() {
        let e = TaskSpec::generate(3, Difficulty::Easy);
        assert_eq!((e.rooms.len(), e.max_score), (2, 3));
        let m = TaskSpec::generate(3, Difficulty::Medium);
        assert_eq!((m.rooms.len(), m.max_score), (4, 5));
        assert_eq!(m.max_score as usize, m.subgoal_chain.len());
    }

    #[test]
    fn some_generated_doors_start_closed() {
        let closed = (0..200)
            .filter(|&s| TaskSpec::generate(s, Difficulty::Easy).doors[0].closed)
            .count();
        assert!((70..=130).contains(&closed), "{closed}");
    }

    #[test]
    fn reset_hides_admissible_actions() {
        for seed in 0..50 {
            let spec = TaskSpec::generate(seed, Difficulty::Medium);
            let (s1, o1) = spec.reset();
            let (s2, o2) = spec.reset();
            assert_eq!(o1, o2);
            assert_eq!(s1, s2);
            assert_eq!(s1.subgoals_done, 0);
            assert!(!o1.text.contains(ADMISSIBLE_DEBUG_MARKER));
            assert!(spec.debug_admissible(&s1).contains(ADMISSIBLE_DEBUG_MARKER));
        }
    }

    #[test]
    fn scripted_walkthrough_scores_in_order() {
        let spec = fixed_spec();
        let (s, fb) = run(
            &spec,
            &[
                "examine cookbook",
                "take tomato",
                "go north",
                "take knife",
                "chop tomato with knife",
                "go south",
                "cook tomato with stove",
                "eat meal",
            ],
        );
        let deltas: Vec<u32> = fb.iter().map(|f| f.score_delta).collect();
        assert_eq!(deltas, vec![0, 0, 0, 0, 1, 0, 1, 1]);
        assert!(fb[0].text.contains("chop tomato with knife"));
        assert!(fb.last().unwrap().done);
        assert!(s.is_done(&spec));
        assert_eq!(spec.step(&s, &act("look")), Err(EnvError::EpisodeDone));
    }

    #[test]
    fn chop_scores_when_next_in_chain() {
        let spec = fixed_spec();
        let (_, fb) = run(&spec, &["examine cookbook", "take tomato", "go north", "take knife", "chop tomato with knife"]);
        assert_eq!(fb[4].score_delta, 1);
        assert_eq!(fb[4].kind, FeedbackKind::Scored);
    }

    #[test]
    fn examine_cookbook_reveals_recipe_without_score() {
        let spec = fixed_spec();
        let (s, fb) = run(&spec, &["examine cookbook"]);
        assert_eq!(fb[0].score_delta, 0);
        assert!(fb[0].text.contains("recipe"));
        assert!(s.recipe_known);
    }

    #[test]
    fn unparsable_command() {
        let spec = fixed_spec();
        let (s0, _) = spec.reset();
        let (s1, fb) = spec.step(&s0, &act("frobnicate the wug")).unwrap();
        assert!(!fb.parse_ok);
        assert_eq!(fb.score_delta, 0);
        assert_eq!(fb.text, UNPARSABLE_MESSAGE);
        assert_eq!(s1.steps_taken, 1);
        for bad in ["take", "go", "chop knife with knife", "eat"] {
            let (_, fb) = spec.step(&s0, &act(bad)).unwrap();
            assert!(!fb.parse_ok, "{bad}");
        }
    }

    #[test]
    fn out_of_order_subgoal_does_not_score() {
        let spec = fixed_spec();
        let (_, fb) = run(&spec, &["examine cookbook", "take tomato", "cook tomato with stove", "eat meal"]);
        assert!(fb.iter().all(|f| f.score_delta == 0));
    }

    #[test]
    fn doors_block_until_opened() {
        let mut spec = fixed_spec();
        spec.doors[0].closed = true;
        let (_, fb) = run(&spec, &["go north", "open north door", "open north door", "go north"]);
        assert_eq!(fb[0].kind, FeedbackKind::Failed);
        assert_eq!(fb[1].kind, FeedbackKind::Opened);
        assert_eq!(fb[2].text, "That is already open.");
        assert_eq!(fb[3].kind, FeedbackKind::Moved);
    }

    #[test]
    fn task_id_round_trip() {
        let id = task_id(Difficulty::Medium, 42);
        assert_eq!(parse_task_id(&id), Some((Difficulty::Medium, 42)));
        assert_eq!(parse_task_id("hard-1"), None);
    }

    #[test]
    fn spec_json_keys() {
        let spec = TaskSpec::generate(1, Difficulty::Easy);
        let v: serde_json::Value = serde_json::to_value(&spec).unwrap();
        let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        keys.sort();
        assert_eq!(keys, ["distractors", "doors", "items", "max_score", "rooms", "subgoal_chain"]);
        let back: TaskSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn vocabulary_is_stable() {
        let v = vocabulary();
        assert_eq!(v.len(), 24);
        assert_eq!(v[INVENTORY_ACTION].as_str(), "inventory");
        assert_eq!(vocabulary_index(&act("eat meal")), Some(21));
    }
}
