//! Finite symmetry groups acting on images.
//!
//! Three groups are supported: 4-fold rotation, half-swap (top/bottom half
//! exchange) and color inversion. All actions are index permutations or exact
//! pixel maps, so composing an action with its inverse reproduces the input
//! bit-exactly and the group axioms can be checked exhaustively.

use crate::error::{Error, Result};
use crate::image::Image;

/// Identifier of a supported symmetry group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupId {
    /// Quarter-turn rotations, order 4.
    Rot4,
    /// Exchange of the upper and lower image halves, order 2.
    HalfSwap,
    /// Per-pixel value inversion `v -> 1 - v`, order 2.
    ColorInvert,
}

impl GroupId {
    pub const ALL: [GroupId; 3] = [GroupId::Rot4, GroupId::HalfSwap, GroupId::ColorInvert];

    pub fn name(self) -> &'static str {
        match self {
            GroupId::Rot4 => "rot4",
            GroupId::HalfSwap => "half_swap",
            GroupId::ColorInvert => "color_invert",
        }
    }
}

impl std::str::FromStr for GroupId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rot4" => Ok(GroupId::Rot4),
            "half_swap" => Ok(GroupId::HalfSwap),
            "color_invert" => Ok(GroupId::ColorInvert),
            other => Err(Error::InvalidArgument(format!("unknown group '{other}'"))),
        }
    }
}

/// An element of a finite group, identified by its index in `[0, order)`.
///
/// Index 0 is always the identity transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupElement {
    pub group_id: GroupId,
    pub index: usize,
}

/// A finite transformation group with an explicit composition table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteGroup {
    id: GroupId,
    order: usize,
    /// `composition[a * order + b]` is the index of `a ∘ b`.
    composition: Vec<usize>,
}

impl FiniteGroup {
    /// Builds the group for the given identifier.
    pub fn new(id: GroupId) -> Self {
        let order = match id {
            GroupId::Rot4 => 4,
            GroupId::HalfSwap | GroupId::ColorInvert => 2,
        };
        // All three groups are cyclic: composition is addition mod order.
        let mut composition = vec![0; order * order];
        for a in 0..order {
            for b in 0..order {
                composition[a * order + b] = (a + b) % order;
            }
        }
        Self {
            id,
            order,
            composition,
        }
    }

    pub fn id(&self) -> GroupId {
        self.id
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The identity element (index 0).
    pub fn identity(&self) -> GroupElement {
        GroupElement {
            group_id: self.id,
            index: 0,
        }
    }

    /// The element with the given index.
    pub fn element(&self, index: usize) -> Result<GroupElement> {
        if index >= self.order {
            return Err(Error::InvalidArgument(format!(
                "element index {index} out of range for group {} of order {}",
                self.id.name(),
                self.order
            )));
        }
        Ok(GroupElement {
            group_id: self.id,
            index,
        })
    }

    /// All elements in index order.
    pub fn elements(&self) -> impl Iterator<Item = GroupElement> + '_ {
        (0..self.order).map(|index| GroupElement {
            group_id: self.id,
            index,
        })
    }

    fn check_member(&self, g: GroupElement) -> Result<usize> {
        if g.group_id != self.id {
            return Err(Error::InvalidArgument(format!(
                "element of group {} used with group {}",
                g.group_id.name(),
                self.id.name()
            )));
        }
        if g.index >= self.order {
            return Err(Error::InvalidArgument(format!(
                "element index {} out of range for order {}",
                g.index, self.order
            )));
        }
        Ok(g.index)
    }

    /// Table lookup of `g1 ∘ g2`.
    pub fn compose(&self, g1: GroupElement, g2: GroupElement) -> Result<GroupElement> {
        let a = self.check_member(g1)?;
        let b = self.check_member(g2)?;
        Ok(GroupElement {
            group_id: self.id,
            index: self.composition[a * self.order + b],
        })
    }

    /// The element `g⁻¹` with `compose(g, inverse(g)) == identity`.
    pub fn inverse(&self, g: GroupElement) -> Result<GroupElement> {
        let a = self.check_member(g)?;
        let inv = (0..self.order)
            .find(|&b| self.composition[a * self.order + b] == 0)
            .expect("every element of a finite group has an inverse");
        Ok(GroupElement {
            group_id: self.id,
            index: inv,
        })
    }

    /// Applies the transformation associated with `g` to an image.
    ///
    /// `apply(identity)` returns a bit-identical copy. Rot4 requires a square
    /// image and reports a dimension mismatch otherwise.
    pub fn apply(&self, g: GroupElement, img: &Image) -> Result<Image> {
        let index = self.check_member(g)?;
        match self.id {
            GroupId::Rot4 => {
                if img.height() != img.width() {
                    return Err(Error::DimensionMismatch(format!(
                        "rot4 requires a square image, got {}x{}",
                        img.height(),
                        img.width()
                    )));
                }
                let mut out = img.clone();
                for _ in 0..index {
                    out = rotate_quarter_ccw(&out);
                }
                Ok(out)
            }
            GroupId::HalfSwap => {
                if index == 0 {
                    return Ok(img.clone());
                }
                Ok(swap_halves(img))
            }
            GroupId::ColorInvert => {
                if index == 0 {
                    return Ok(img.clone());
                }
                let mut out = img.clone();
                for v in out.pixels_mut() {
                    *v = 1.0 - *v;
                }
                Ok(out)
            }
        }
    }

    /// The full orbit `[apply(0, img), apply(1, img), ...]` of length `order`.
    pub fn orbit(&self, img: &Image) -> Result<Vec<Image>> {
        self.elements().map(|g| self.apply(g, img)).collect()
    }

    /// Exhaustively verifies closure, associativity, identity and inverses.
    pub fn verify_axioms(&self) -> bool {
        let n = self.order;
        let table = |a: usize, b: usize| self.composition[a * n + b];
        // Closure: every table entry is a valid index.
        if self.composition.iter().any(|&e| e >= n) {
            return false;
        }
        // Identity at index 0.
        if (0..n).any(|a| table(0, a) != a || table(a, 0) != a) {
            return false;
        }
        // Associativity.
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if table(table(a, b), c) != table(a, table(b, c)) {
                        return false;
                    }
                }
            }
        }
        // Every element has an inverse.
        (0..n).all(|a| (0..n).any(|b| table(a, b) == 0 && table(b, a) == 0))
    }
}

/// One 90° counter-clockwise quarter turn by index permutation.
fn rotate_quarter_ccw(img: &Image) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    debug_assert_eq!(h, w);
    let mut out = vec![0.0f32; c * h * w];
    let src = img.pixels();
    for ch in 0..c {
        let base = ch * h * w;
        for r in 0..h {
            for col in 0..w {
                // out[r][col] = in[col][w - 1 - r]
                out[base + r * w + col] = src[base + col * w + (w - 1 - r)];
            }
        }
    }
    Image::from_pixels_unchecked(c, h, w, out)
}

/// Exchanges the top and bottom half rows; the middle row of an odd-height
/// image stays in place, keeping the map an exact involution.
fn swap_halves(img: &Image) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let half = h / 2;
    let mut out = img.pixels().to_vec();
    for ch in 0..c {
        let base = ch * h * w;
        for r in 0..half {
            let top = base + r * w;
            let bottom = base + (h - half + r) * w;
            for col in 0..w {
                out.swap(top + col, bottom + col);
            }
        }
    }
    Image::from_pixels_unchecked(c, h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::quantize_pixel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Image {
        let pixels = (0..c * h * w)
            .map(|_| quantize_pixel(rng.gen::<f32>()))
            .collect();
        Image::from_pixels(c, h, w, pixels).unwrap()
    }

    #[test]
    fn identity_is_bit_exact_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for id in GroupId::ALL {
            let group = FiniteGroup::new(id);
            let img = random_image(&mut rng, 1, 8, 8);
            let out = group.apply(group.identity(), &img).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn rot4_quarter_turn_matches_hand_enumeration() {
        // [[a, b], [c, d]] rotated 90° counter-clockwise is [[b, d], [a, c]].
        let img = Image::from_pixels(1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let group = FiniteGroup::new(GroupId::Rot4);
        let g1 = group.element(1).unwrap();
        let rotated = group.apply(g1, &img).unwrap();
        assert_eq!(rotated.pixels(), &[0.2, 0.4, 0.1, 0.3]);
        // Three more applications reproduce the original.
        let mut out = rotated;
        for _ in 0..3 {
            out = group.apply(g1, &out).unwrap();
        }
        assert_eq!(out, img);
    }

    #[test]
    fn rot4_rejects_non_square() {
        let img = Image::zeros(1, 2, 3).unwrap();
        let group = FiniteGroup::new(GroupId::Rot4);
        assert!(group.apply(group.element(1).unwrap(), &img).is_err());
    }

    #[test]
    fn color_invert_is_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let group = FiniteGroup::new(GroupId::ColorInvert);
        let g = group.element(1).unwrap();
        let img = random_image(&mut rng, 1, 6, 6);
        let once = group.apply(g, &img).unwrap();
        for (orig, inv) in img.pixels().iter().zip(once.pixels()) {
            assert_eq!(*inv, 1.0 - *orig);
        }
        let twice = group.apply(g, &once).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn composition_table_cases() {
        let rot4 = FiniteGroup::new(GroupId::Rot4);
        let e = |i| rot4.element(i).unwrap();
        // 90° + 90° = 180°, 270° + 90° = identity.
        assert_eq!(rot4.compose(e(1), e(1)).unwrap().index, 2);
        assert_eq!(rot4.compose(e(3), e(1)).unwrap().index, 0);
        assert_eq!(rot4.inverse(e(1)).unwrap().index, 3);
        assert_eq!(rot4.inverse(e(0)).unwrap().index, 0);

        let half = FiniteGroup::new(GroupId::HalfSwap);
        let h1 = half.element(1).unwrap();
        assert_eq!(half.compose(h1, h1).unwrap().index, 0);

        let inv = FiniteGroup::new(GroupId::ColorInvert);
        assert_eq!(inv.inverse(inv.element(1).unwrap()).unwrap().index, 1);
    }

    #[test]
    fn compose_rejects_foreign_elements() {
        let rot4 = FiniteGroup::new(GroupId::Rot4);
        let foreign = GroupElement {
            group_id: GroupId::HalfSwap,
            index: 1,
        };
        assert!(rot4.compose(rot4.identity(), foreign).is_err());
    }

    #[test]
    fn axioms_hold_for_all_groups() {
        for id in GroupId::ALL {
            assert!(FiniteGroup::new(id).verify_axioms(), "{:?}", id);
        }
    }

    #[test]
    fn apply_then_inverse_is_identity_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for id in GroupId::ALL {
            let group = FiniteGroup::new(id);
            for _ in 0..20 {
                let img = random_image(&mut rng, 1, 8, 8);
                for g in group.elements() {
                    let inv = group.inverse(g).unwrap();
                    let back = group.apply(inv, &group.apply(g, &img).unwrap()).unwrap();
                    assert_eq!(back, img);
                }
            }
        }
    }

    #[test]
    fn apply_commutes_with_composition_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for id in GroupId::ALL {
            let group = FiniteGroup::new(id);
            for _ in 0..10 {
                let img = random_image(&mut rng, 1, 8, 8);
                for g1 in group.elements() {
                    for g2 in group.elements() {
                        let composed = group.compose(g1, g2).unwrap();
                        let lhs = group.apply(composed, &img).unwrap();
                        let rhs = group.apply(g1, &group.apply(g2, &img).unwrap()).unwrap();
                        assert_eq!(lhs, rhs);
                    }
                }
            }
        }
    }

    #[test]
    fn orbit_has_group_order_and_starts_at_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 1, 8, 8);
        for id in GroupId::ALL {
            let group = FiniteGroup::new(id);
            let orbit = group.orbit(&img).unwrap();
            assert_eq!(orbit.len(), group.order());
            assert_eq!(orbit[0], img);
        }
    }

    #[test]
    fn orbit_of_symmetric_cross_is_constant() {
        // A plus-shaped pattern is a fixed point of every quarter turn.
        let h = 8;
        let mut img = Image::zeros(1, h, h).unwrap();
        for y in 0..h {
            for x in 0..h {
                let dy = y as f32 - (h as f32 - 1.0) / 2.0;
                let dx = x as f32 - (h as f32 - 1.0) / 2.0;
                if dx.abs().min(dy.abs()) < 1.0 {
                    img.set(0, y, x, 0.75);
                }
            }
        }
        let group = FiniteGroup::new(GroupId::Rot4);
        for rotated in group.orbit(&img).unwrap() {
            assert_eq!(rotated, img);
        }
    }

    #[test]
    fn half_swap_moves_rows() {
        let img = Image::from_pixels(1, 4, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let group = FiniteGroup::new(GroupId::HalfSwap);
        let out = group.apply(group.element(1).unwrap(), &img).unwrap();
        assert_eq!(out.pixels(), &[0.3, 0.4, 0.1, 0.2]);
    }
}
