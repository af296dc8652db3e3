use crate::error::{Error, Result};

/// Half-open rectangle of integer displacements `[u_min,u_max) x [v_min,v_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SearchWindow {
    pub u_min: i32,
    pub u_max: i32,
    pub v_min: i32,
    pub v_max: i32,
}

impl Default for SearchWindow {
    /// 400x200 window.
    fn default() -> Self {
        Self {
            u_min: -200,
            u_max: 200,
            v_min: -100,
            v_max: 100,
        }
    }
}

impl SearchWindow {
    pub fn new(u_min: i32, u_max: i32, v_min: i32, v_max: i32) -> Result<Self> {
        let w = Self {
            u_min,
            u_max,
            v_min,
            v_max,
        };
        w.validate()?;
        Ok(w)
    }

    /// Window holding the single displacement `(0,0)`.
    pub fn zero() -> Self {
        Self {
            u_min: 0,
            u_max: 1,
            v_min: 0,
            v_max: 1,
        }
    }

    /// Symmetric window covering every displacement within an image of the
    /// given size.
    pub fn covering(width: usize, height: usize) -> Self {
        let (w, h) = (width as i32, height as i32);
        Self {
            u_min: 1 - w,
            u_max: w,
            v_min: 1 - h,
            v_max: h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u_min >= self.u_max || self.v_min >= self.v_max {
            return Err(Error::InvalidArgument(format!("empty search window {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        (self.u_max - self.u_min) as usize
    }

    pub fn height(&self) -> usize {
        (self.v_max - self.v_min) as usize
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, du: i32, dv: i32) -> bool {
        (self.u_min..self.u_max).contains(&du) && (self.v_min..self.v_max).contains(&dv)
    }

    /// Scanline index of a displacement (`dv` major, `du` minor); this is
    /// the tie-break order for equal scores.
    pub fn index(&self, du: i32, dv: i32) -> usize {
        (dv - self.v_min) as usize * self.width() + (du - self.u_min) as usize
    }

    pub fn displacement(&self, index: usize) -> (i32, i32) {
        let w = self.width();
        (self.u_min + (index % w) as i32, self.v_min + (index / w) as i32)
    }

    /// Displacements in scanline order.
    pub fn iter(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        (self.v_min..self.v_max).flat_map(move |dv| (self.u_min..self.u_max).map(move |du| (du, dv)))
    }
}
